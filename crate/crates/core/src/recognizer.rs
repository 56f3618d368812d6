//! The split-and-merge table structure recognizer: a pyramid backbone with
//! two separator branches and the merge head on its stride-4 level.

use std::path::Path;

use candle_core::{DType, Tensor};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::grid_assembler::{assemble_grid, CellGrid, BINARIZE_THRESHOLD};
use crate::grid_assembler::Orientation;
use crate::merger::{adjacent_pairs, apply_merges, GridFeatures, MergeConfig, MergeHead, TableStructure, MERGE_THRESHOLD};
use crate::nn::backbone::{BackboneConfig, TsrBackbone};
use crate::nn::layers::sigmoid;
use crate::nn::{checkpoint, image_to_tensor, FeatureMap, ParamStore};
use crate::splitter::{SplitBranch, SplitLogits, DEFAULT_KERNEL_WIDTH};

const RECOGNIZER_KIND: &str = "table_recognizer";
/// Network inputs are padded to a multiple of this.
pub const INPUT_ALIGN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerConfig {
    pub backbone: BackboneConfig,
    /// Kernel width of the slice-wise message passing.
    pub kernel_width: usize,
    pub merge: MergeConfig,
    /// Table crops are rescaled so their longer side equals this.
    pub long_side: usize,
    pub split_threshold: f64,
    pub merge_threshold: f64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::resnet18(),
            kernel_width: DEFAULT_KERNEL_WIDTH,
            merge: MergeConfig::default(),
            long_side: 1024,
            split_threshold: BINARIZE_THRESHOLD as f64,
            merge_threshold: MERGE_THRESHOLD,
        }
    }
}

impl RecognizerConfig {
    pub fn desk() -> Self {
        Self {
            backbone: BackboneConfig::tiny(),
            merge: MergeConfig { feature_dim: 128, relation_hidden: 128 },
            long_side: 256,
            ..Self::default()
        }
    }
}

/// Output of one recognizer pass over a crop.
#[derive(Debug, Clone)]
pub struct Recognition {
    pub structure: TableStructure,
    pub grid: Option<CellGrid>,
    /// Merge probabilities in [`adjacent_pairs`] order.
    pub pair_scores: Vec<f64>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone)]
pub struct TableRecognizer {
    config: RecognizerConfig,
    store: ParamStore,
    backbone: TsrBackbone,
    row: SplitBranch,
    col: SplitBranch,
    merge: MergeHead,
}

impl TableRecognizer {
    pub fn new(config: RecognizerConfig, dtype: DType, seed: u64) -> Result<Self> {
        let store = ParamStore::new(dtype, seed);
        let root = store.root();
        let c = config.backbone.out_channels;
        let backbone = TsrBackbone::new(&root.pp("backbone"), &config.backbone)?;
        let row = SplitBranch::new(&root.pp("split_row"), c, config.kernel_width, Orientation::Row)?;
        let col = SplitBranch::new(&root.pp("split_col"), c, config.kernel_width, Orientation::Col)?;
        let merge = MergeHead::new(&root.pp("merge"), c, &config.merge)?;
        Ok(Self { config, store, backbone, row, col, merge })
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn merge_head(&self) -> &MergeHead {
        &self.merge
    }

    /// P2 features and separator logits for a padded `(1, 3, H, W)` input.
    pub fn split_forward(&self, image: &Tensor, train: bool) -> Result<(FeatureMap, SplitLogits)> {
        let p2 = self.backbone.forward_t(image, train)?;
        let logits = SplitLogits { row: self.row.forward(&p2)?, col: self.col.forward(&p2)? };
        Ok((p2, logits))
    }

    /// Grid-CNN features for an assembled grid.
    pub fn grid_forward(&self, p2: &FeatureMap, grid: &CellGrid) -> Result<GridFeatures> {
        self.merge.grid_cnn(&self.merge.grid_features(p2, grid)?)
    }

    /// Full structure recognition on a padded input whose valid region is
    /// the top-left `width x height`.
    pub fn recognize_tensor(&self, image: &Tensor, width: usize, height: usize) -> Result<Recognition> {
        let (p2, logits) = self.split_forward(image, false)?;
        let masks = logits.probabilities()?;
        let whole = || BBox { x: 0.0, y: 0.0, w: width as f64, h: height as f64 }.to_quad();
        let assembly = match assemble_grid(&masks.row, &masks.col, width, height, self.config.split_threshold as f32) {
            Ok(a) => a,
            Err(e) => {
                return Ok(Recognition {
                    structure: TableStructure::single(whole()),
                    grid: None,
                    pair_scores: Vec::new(),
                    diagnostics: vec![format!("grid assembly failed, emitting a single cell: {e}")],
                })
            }
        };
        let mut diagnostics: Vec<String> =
            assembly.diagnostics.iter().map(|d| format!("{:?}: {}", d.orientation, d.message)).collect();
        let grid = assembly.grid;
        let pairs = adjacent_pairs(grid.rows, grid.cols);
        let f = self.grid_forward(&p2, &grid)?;
        for (r, c) in &f.degenerate {
            diagnostics.push(format!("cell ({r}, {c}) is degenerate; zero descriptor used"));
        }
        let scores: Vec<f64> = if pairs.is_empty() {
            Vec::new()
        } else {
            sigmoid(&self.merge.score_pairs(&f, &grid, &pairs)?)?.to_dtype(DType::F64)?.to_vec1()?
        };
        let structure = apply_merges(&grid, &pairs, &scores, self.config.merge_threshold);
        Ok(Recognition { structure, grid: Some(grid), pair_scores: scores, diagnostics })
    }

    /// Recognize a crop that has already been rescaled; it is padded to a
    /// multiple of 32 internally.
    pub fn recognize_structure(&self, crop: &RgbImage) -> Result<Recognition> {
        let (w, h) = crop.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput("empty table crop".into()));
        }
        let x = pad_input(&image_to_tensor(crop, self.store.dtype())?)?;
        self.recognize_tensor(&x, w as usize, h as usize)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, RECOGNIZER_KIND, &self.config, &self.store)
    }

    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let config: RecognizerConfig = checkpoint::read_config(path, RECOGNIZER_KIND)?;
        let model = Self::new(config, dtype, 0)?;
        checkpoint::load_into(path, &model.store)?;
        Ok(model)
    }
}

/// Total recognizer objective: split loss plus merge loss, unweighted.
pub fn recognizer_loss(split: &Tensor, merge: &Tensor) -> Result<Tensor> {
    Ok((split + merge)?)
}

/// Zero-pad a `(1, C, H, W)` tensor on the bottom/right to multiples of 32
/// (at least 32).
pub fn pad_input(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let ph = h.div_ceil(INPUT_ALIGN).max(1) * INPUT_ALIGN;
    let pw = w.div_ceil(INPUT_ALIGN).max(1) * INPUT_ALIGN;
    Ok(x.pad_with_zeros(2, 0, ph - h)?.pad_with_zeros(3, 0, pw - w)?)
}
