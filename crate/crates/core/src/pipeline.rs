//! End-to-end segmentation: recipes → PC maps and K → every clustering method →
//! highest silhouette rate wins → label map at image resolution.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{cluster, ClusterLabels, Method};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::feature_prep::{concat_features, FeatureRecipe};
use crate::pca::{fit_pca, project_pc_maps, PcMaps, PcaModel};
use crate::quality::sr_for_clustering;
use crate::tensor_io::{FeatureTensor, LabelMap, MAX_LABEL};

/// Loaded tensors keyed by the source names recipes refer to.
pub type TensorStore = BTreeMap<String, FeatureTensor>;

/// A recipe turned into PC maps, with K from its own spectrum (or the override).
#[derive(Debug, Clone)]
pub struct Representation {
    pub recipe_id: String,
    pub model: PcaModel,
    pub pc_maps: PcMaps,
    pub k: usize,
}

#[derive(Debug, Clone)]
pub enum RecipeOutcome {
    Ready(Representation),
    Failed { recipe_id: String, error: String },
}

impl RecipeOutcome {
    pub fn recipe_id(&self) -> &str {
        match self {
            RecipeOutcome::Ready(r) => &r.recipe_id,
            RecipeOutcome::Failed { recipe_id, .. } => recipe_id,
        }
    }

    pub fn ready(&self) -> Option<&Representation> {
        match self {
            RecipeOutcome::Ready(r) => Some(r),
            RecipeOutcome::Failed { .. } => None,
        }
    }
}

/// Builds one recipe's representation.
pub fn build_representation(
    recipe: &FeatureRecipe,
    tensors: &TensorStore,
    config: &RunConfig,
) -> Result<Representation> {
    let sources = recipe
        .sources
        .iter()
        .map(|s| {
            tensors
                .get(s)
                .ok_or_else(|| Error::UnknownSource(s.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = concat_features(recipe, &sources)?;
    let model = fit_pca(&matrix, config.t_eig)?;
    let k = config.k_override.unwrap_or(model.k_selected);
    let pc_maps = project_pc_maps(&matrix, &model, k)?;
    Ok(Representation {
        recipe_id: recipe.id.clone(),
        model,
        pc_maps,
        k,
    })
}

/// Builds every recipe. Individual failures are recorded, not fatal.
pub fn build_candidates(
    recipes: &[FeatureRecipe],
    tensors: &TensorStore,
    config: &RunConfig,
) -> Result<Vec<RecipeOutcome>> {
    if recipes.is_empty() {
        return Err(Error::InvalidConfig("no recipes given".into()));
    }
    let outcomes: Vec<RecipeOutcome> = recipes
        .par_iter()
        .map(
            |recipe| match build_representation(recipe, tensors, config) {
                Ok(rep) => RecipeOutcome::Ready(rep),
                Err(e) => RecipeOutcome::Failed {
                    recipe_id: recipe.id.clone(),
                    error: e.to_string(),
                },
            },
        )
        .collect();
    if outcomes.iter().all(|o| o.ready().is_none()) {
        return Err(Error::AllRecipesFailed);
    }
    Ok(outcomes)
}

/// One row of the candidate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub recipe: String,
    pub method: Method,
    pub k: Option<usize>,
    pub sr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SegmentationResult {
    pub recipes: Vec<RecipeOutcome>,
    /// Recipe order, then method order from the config.
    pub candidates: Vec<CandidateRecord>,
    pub winner: usize,
    pub winner_labels: ClusterLabels,
    pub label_map: LabelMap,
}

impl SegmentationResult {
    pub fn winner_record(&self) -> &CandidateRecord {
        &self.candidates[self.winner]
    }

    pub fn winner_representation(&self) -> &Representation {
        let id = &self.winner_record().recipe;
        self.recipes
            .iter()
            .filter_map(RecipeOutcome::ready)
            .find(|r| &r.recipe_id == id)
            .expect("winner comes from a ready recipe")
    }
}

/// Serialized summary written as `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentReport<'a> {
    pub candidates: &'a [CandidateRecord],
    pub winner: WinnerSummary<'a>,
    pub recipes: Vec<RecipeSummary<'a>>,
    pub seed: u64,
    pub config: &'a RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct WinnerSummary<'a> {
    pub index: usize,
    pub recipe: &'a str,
    pub method: Method,
    pub k: usize,
    pub sr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecipeSummary<'a> {
    pub recipe: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_selected: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<&'a str>,
}

impl SegmentationResult {
    pub fn report<'a>(&'a self, config: &'a RunConfig) -> SegmentReport<'a> {
        let w = self.winner_record();
        SegmentReport {
            candidates: &self.candidates,
            winner: WinnerSummary {
                index: self.winner,
                recipe: &w.recipe,
                method: w.method,
                k: w.k.expect("winner has k"),
                sr: w.sr.expect("winner has sr"),
            },
            recipes: self
                .recipes
                .iter()
                .map(|o| match o {
                    RecipeOutcome::Ready(r) => RecipeSummary {
                        recipe: &r.recipe_id,
                        k_selected: Some(r.model.k_selected),
                        grid: Some([r.pc_maps.grid_h(), r.pc_maps.grid_w()]),
                        error: None,
                    },
                    RecipeOutcome::Failed { recipe_id, error } => RecipeSummary {
                        recipe: recipe_id,
                        k_selected: None,
                        grid: None,
                        error: Some(error),
                    },
                })
                .collect(),
            seed: config.seed,
            config,
        }
    }
}

fn evaluate_candidate(
    rep: &Representation,
    method: Method,
    config: &RunConfig,
) -> Result<(ClusterLabels, f64)> {
    if rep.k > MAX_LABEL as usize + 1 {
        return Err(Error::KTooLarge {
            k: rep.k,
            available: MAX_LABEL as usize + 1,
        });
    }
    let matrix = rep.pc_maps.as_matrix();
    let labels = cluster(matrix, rep.k, method, &config.cluster_options())?;
    if let Some(empty) = labels.sizes().iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(empty));
    }
    let report = sr_for_clustering(matrix, &labels, config.t_sil, config.n_max_silhouette)?;
    Ok((labels, report.sr))
}

/// Runs every (recipe × method) candidate and keeps the one with the highest
/// silhouette rate; ties go to the earlier candidate.
pub fn run_segmentation(
    recipes: &[FeatureRecipe],
    tensors: &TensorStore,
    image_h: usize,
    image_w: usize,
    config: &RunConfig,
) -> Result<SegmentationResult> {
    config.validate()?;
    let outcomes = build_candidates(recipes, tensors, config)?;

    let jobs: Vec<(&RecipeOutcome, Method)> = outcomes
        .iter()
        .flat_map(|o| config.methods.iter().map(move |&m| (o, m)))
        .collect();
    let evaluated: Vec<(CandidateRecord, Option<ClusterLabels>)> = jobs
        .par_iter()
        .map(|&(outcome, method)| {
            let mut record = CandidateRecord {
                recipe: outcome.recipe_id().to_string(),
                method,
                k: None,
                sr: None,
                error: None,
            };
            match outcome {
                RecipeOutcome::Failed { error, .. } => {
                    record.error = Some(error.clone());
                    (record, None)
                }
                RecipeOutcome::Ready(rep) => {
                    record.k = Some(rep.k);
                    match evaluate_candidate(rep, method, config) {
                        Ok((labels, sr)) => {
                            record.sr = Some(sr);
                            (record, Some(labels))
                        }
                        Err(e) => {
                            record.error = Some(e.to_string());
                            (record, None)
                        }
                    }
                }
            }
        })
        .collect();

    let mut winner: Option<usize> = None;
    for (i, (record, _)) in evaluated.iter().enumerate() {
        if let Some(sr) = record.sr {
            if winner.is_none_or(|w| sr > evaluated[w].0.sr.unwrap()) {
                winner = Some(i);
            }
        }
    }
    let winner = winner.ok_or(Error::AllCandidatesErrored)?;

    let (candidates, mut labels): (Vec<_>, Vec<_>) = evaluated.into_iter().unzip();
    let winner_labels = labels[winner].take().expect("winner has labels");
    let rep = outcomes
        .iter()
        .filter_map(RecipeOutcome::ready)
        .find(|r| r.recipe_id == candidates[winner].recipe)
        .expect("winner comes from a ready recipe");
    let label_map = upsample_labels(
        &winner_labels.labels,
        rep.pc_maps.grid_h(),
        rep.pc_maps.grid_w(),
        image_h,
        image_w,
    )?;

    Ok(SegmentationResult {
        recipes: outcomes,
        candidates,
        winner,
        winner_labels,
        label_map,
    })
}

/// Nearest-neighbor label upsampling: image pixel `i` reads grid cell
/// `floor((i + 0.5) * grid / image)`.
pub fn upsample_labels(
    labels: &[usize],
    grid_h: usize,
    grid_w: usize,
    image_h: usize,
    image_w: usize,
) -> Result<LabelMap> {
    if labels.len() != grid_h * grid_w {
        return Err(Error::DimMismatch(format!(
            "{} labels for a {grid_h}x{grid_w} grid",
            labels.len()
        )));
    }
    if image_h == 0 || image_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "image size must be positive, got {image_h}x{image_w}"
        )));
    }
    let src =
        |i: usize, grid: usize, image: usize| ((2 * i + 1) * grid / (2 * image)).min(grid - 1);
    let cols: Vec<usize> = (0..image_w).map(|x| src(x, grid_w, image_w)).collect();
    let mut out = Vec::with_capacity(image_h * image_w);
    for y in 0..image_h {
        let gy = src(y, grid_h, image_h);
        out.extend(cols.iter().map(|&gx| labels[gy * grid_w + gx]));
    }
    LabelMap::from_usize(image_h, image_w, &out)
}
