//! Unsupervised, class-agnostic segmentation by clustering pixel-level CNN
//! features.
//!
//! A [`FeatureRecipe`] names one or more exported feature tensors. They are
//! aligned and concatenated into a [`PixelMatrix`], projected onto principal
//! components, and the number of eigenvalues whose ratio to the largest exceeds
//! `t_eig` becomes both the number of PC maps kept and the cluster count K.
//! Each representation is clustered with k-means and agglomerative clustering;
//! the result with the highest silhouette rate becomes the mask.

pub mod clustering;
pub mod config;
pub mod error;
pub mod eval;
pub mod feature_prep;
pub mod pca;
pub mod pipeline;
pub mod quality;
pub mod tensor_io;

pub use clustering::{
    assign_nearest, cluster, downsample_rows, hierarchical, kmeans, kmeans_fit, Centroids,
    ClusterLabels, ClusterOptions, KMeansFit, KMeansParams, Linkage, Method,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{
    evaluate, match_labels, mean_iou, pixel_accuracy, EvalConfig, EvalReport, Matching, NMode,
};
pub use feature_prep::{
    concat_features, resample_bilinear, standardize_channels, FeatureRecipe, GridPolicy,
    PixelMatrix,
};
pub use pca::{fit_pca, project_pc_maps, select_k, PcMaps, PcaModel};
pub use pipeline::{
    build_candidates, run_segmentation, upsample_labels, CandidateRecord, RecipeOutcome,
    Representation, SegmentationResult, TensorStore,
};
pub use quality::{silhouette_rate, silhouette_scores, sr_for_clustering, SilhouetteReport};
pub use tensor_io::{
    read_ftz, read_label_png, write_ftz, write_label_png, FeatureTensor, LabelMap,
};
