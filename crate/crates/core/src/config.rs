use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterOptions, Linkage, Method};
use crate::error::{Error, Result};
use crate::pca::DEFAULT_T_EIG;
use crate::quality::{DEFAULT_N_MAX_SILHOUETTE, DEFAULT_T_SIL};

/// Every knob of a segmentation run. Unknown keys in a JSON config are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Eigenvalue-ratio threshold for choosing K.
    pub t_eig: f64,
    /// Silhouette threshold for the silhouette rate.
    pub t_sil: f64,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Fixed cluster count instead of the spectrum rule.
    pub k_override: Option<usize>,
    pub n_max_silhouette: usize,
    pub n_hier_max: usize,
    pub standardize: bool,
    pub linkage: Linkage,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_eig: DEFAULT_T_EIG,
            t_sil: DEFAULT_T_SIL,
            seed: 0,
            methods: Method::ALL.to_vec(),
            k_override: None,
            n_max_silhouette: DEFAULT_N_MAX_SILHOUETTE,
            n_hier_max: 4096,
            standardize: true,
            linkage: Linkage::Ward,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.t_eig > 0.0 && self.t_eig < 1.0) {
            return bad(format!("t_eig must be in (0, 1), got {}", self.t_eig));
        }
        if !(-1.0..1.0).contains(&self.t_sil) {
            return bad(format!("t_sil must be in [-1, 1), got {}", self.t_sil));
        }
        if self.methods.is_empty() {
            return bad("at least one clustering method is required".into());
        }
        if self.k_override == Some(0) {
            return bad("k override must be at least 1".into());
        }
        if self.n_max_silhouette == 0 || self.n_hier_max == 0 {
            return bad("point caps must be positive".into());
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad(format!("tol must be non-negative, got {}", self.tol));
        }
        Ok(())
    }

    pub fn cluster_options(&self) -> ClusterOptions {
        ClusterOptions {
            seed: self.seed,
            max_iter: self.max_iter,
            tol: self.tol,
            linkage: self.linkage,
            n_hier_max: self.n_hier_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.t_eig, c.t_sil), (0.3, 0.3));
        assert_eq!(c.methods, vec![Method::Kmeans, Method::Hierarchical]);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"t_eig": 0.34, "methods": ["hierarchical"]}"#).unwrap();
        assert_eq!(c.t_eig, 0.34);
        assert_eq!(c.methods, vec![Method::Hierarchical]);
        assert_eq!(c.n_hier_max, 4096);
        assert!(serde_json::from_str::<RunConfig>(r#"{"t_eigen": 0.3}"#).is_err());
    }

    #[test]
    fn out_of_range_thresholds() {
        for c in [
            RunConfig {
                t_eig: 0.0,
                ..Default::default()
            },
            RunConfig {
                t_eig: 1.0,
                ..Default::default()
            },
            RunConfig {
                t_sil: 1.0,
                ..Default::default()
            },
            RunConfig {
                methods: vec![],
                ..Default::default()
            },
            RunConfig {
                k_override: Some(0),
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
