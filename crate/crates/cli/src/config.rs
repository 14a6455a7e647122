use std::fs;
use std::path::{Path, PathBuf};

use headpose::ffd::{DiscriminatorConfig, GanHyper, GeneratorConfig};
use headpose::localizer::{LocalizerConfig, LocalizerHyper};
use headpose::pipeline::PipelineConfig;
use headpose::posenet::{BranchConfig, PoseHyper, TridentConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run can be configured with. Missing sections take their
/// defaults; the model sizes default to the desk-scale variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub localizer: LocalizerConfig,
    pub localizer_hyper: LocalizerHyper,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub gan: GanHyper,
    pub trident: TridentConfig,
    pub pose: PoseHyper,
    pub shoulder: BranchConfig,
    /// Directory that default checkpoint paths resolve against.
    #[serde(skip)]
    out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            localizer: LocalizerConfig::default(),
            localizer_hyper: LocalizerHyper::default(),
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::desk(),
            gan: GanHyper::desk(),
            trident: TridentConfig::default(),
            pose: PoseHyper::desk(),
            shoulder: BranchConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, use_gt_center: bool, out: &Path) {
        if let Some(s) = seed {
            self.pipeline.seed = s;
            self.localizer_hyper.seed = s;
            self.gan.seed = s;
            self.pose.seed = s;
        }
        if use_gt_center {
            self.pipeline.use_gt_center = true;
        }
        self.out = out.to_path_buf();
    }

    pub fn seed(&self) -> u64 {
        self.pipeline.seed
    }

    pub fn checkpoint(&self, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out.join(default_name))
    }

    /// Pipeline config with unset checkpoint paths pointing into the output
    /// directory. The shoulder net is used only when its checkpoint exists.
    pub fn resolved_pipeline(&self) -> PipelineConfig {
        let p = &self.pipeline;
        let shoulder = self.checkpoint(&p.shoulder, "shoulder.ckpt");
        PipelineConfig {
            localizer: Some(self.checkpoint(&p.localizer, "localizer.ckpt")),
            ffd: Some(self.checkpoint(&p.ffd, "ffd.ckpt")),
            trident: Some(self.checkpoint(&p.trident, "trident.ckpt")),
            shoulder: (p.shoulder.is_some() || shoulder.is_file()).then_some(shoulder),
            ..p.clone()
        }
    }
}
