//! Flat `key = value` pipeline configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::chin::{ChinParams, GnRule};
use crate::edges::CannyParams;
use crate::error::{Error, Result};
use crate::imaging::ClaheParams;
use crate::landmark::Facing;
use crate::lines::{DegreeThresholds, EdgeLineParams, RansacParams};
use crate::pnm::write_bytes;
use crate::wtm::MAX_TEMPLATE_SIDE;

/// Every recognised key with a one-line description.
pub const KEYS: [(&str, &str); 23] = [
    ("corpus_dir", "directory of training images and annotations"),
    ("model_dir", "directory holding the trained model"),
    ("output_dir", "directory for detections and reports"),
    ("facing", "direction the face points: left or right"),
    ("canny.sigma", "Gaussian sigma before Sobel"),
    ("canny.low_ratio", "weak threshold as a fraction of the max gradient"),
    ("canny.high_ratio", "strong threshold as a fraction of the max gradient"),
    ("enhance.tile", "CLAHE tile side in pixels"),
    ("enhance.clip", "CLAHE clip limit"),
    ("edge.enhance_first", "enhance the chin window before Canny"),
    ("chin.min_chain_len", "shortest contour considered for the chin"),
    ("gn.rule", "gnathion rule: arc_mid or chord_max"),
    ("regions.margin", "normalized margin added to learned regions"),
    ("template.max_size", "largest template side in pixels"),
    ("template.weight_dir", "directory of <Name>.pgm weight maps"),
    ("frankfort.sn_offset_deg", "angle between S-N and Frankfort"),
    ("ransac.seed", "seed for line sampling"),
    ("ransac.iterations", "RANSAC iterations"),
    ("ransac.band", "inlier band half-width in pixels"),
    ("ransac.min_inliers", "fewest inliers accepted for a line"),
    ("ransac.max_gap", "largest gap in px inside one run of line inliers"),
    ("thresholds.file", "degree threshold table; empty uses the shipped table"),
    ("split.seed", "seed for the train/test split"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus_dir: PathBuf,
    pub model_dir: PathBuf,
    pub output_dir: PathBuf,
    pub facing: Facing,
    pub canny: CannyParams,
    pub clahe: ClaheParams,
    pub enhance_first: bool,
    pub min_chain_len: usize,
    pub gn_rule: GnRule,
    pub region_margin: f64,
    pub template_max_size: usize,
    pub weight_dir: Option<PathBuf>,
    pub sn_offset_deg: f64,
    pub ransac: RansacParams,
    pub thresholds_file: Option<PathBuf>,
    pub split_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus_dir: PathBuf::from("corpus"),
            model_dir: PathBuf::from("model"),
            output_dir: PathBuf::from("out"),
            facing: Facing::Right,
            canny: CannyParams::default(),
            clahe: ClaheParams::default(),
            enhance_first: true,
            min_chain_len: 20,
            gn_rule: GnRule::ArcMid,
            region_margin: 0.02,
            template_max_size: MAX_TEMPLATE_SIDE,
            weight_dir: None,
            sn_offset_deg: 7.0,
            ransac: RansacParams::default(),
            thresholds_file: None,
            split_seed: 42,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "corpus_dir" => self.corpus_dir = PathBuf::from(v),
            "model_dir" => self.model_dir = PathBuf::from(v),
            "output_dir" => self.output_dir = PathBuf::from(v),
            "facing" => self.facing = v.parse()?,
            "canny.sigma" => self.canny.sigma = parse(key, v)?,
            "canny.low_ratio" => self.canny.low_ratio = parse(key, v)?,
            "canny.high_ratio" => self.canny.high_ratio = parse(key, v)?,
            "enhance.tile" => self.clahe.tile = parse(key, v)?,
            "enhance.clip" => self.clahe.clip_limit = parse(key, v)?,
            "edge.enhance_first" => self.enhance_first = parse(key, v)?,
            "chin.min_chain_len" => self.min_chain_len = parse(key, v)?,
            "gn.rule" => self.gn_rule = v.parse()?,
            "regions.margin" => self.region_margin = parse(key, v)?,
            "template.max_size" => self.template_max_size = parse(key, v)?,
            "template.weight_dir" => self.weight_dir = opt_path(v),
            "frankfort.sn_offset_deg" => self.sn_offset_deg = parse(key, v)?,
            "ransac.seed" => self.ransac.seed = parse(key, v)?,
            "ransac.iterations" => self.ransac.iterations = parse(key, v)?,
            "ransac.band" => self.ransac.band = parse(key, v)?,
            "ransac.min_inliers" => self.ransac.min_inliers = parse(key, v)?,
            "ransac.max_gap" => self.ransac.max_gap = parse(key, v)?,
            "thresholds.file" => self.thresholds_file = opt_path(v),
            "split.seed" => self.split_seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "corpus_dir" => self.corpus_dir.display().to_string(),
            "model_dir" => self.model_dir.display().to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "facing" => self.facing.to_string(),
            "canny.sigma" => self.canny.sigma.to_string(),
            "canny.low_ratio" => self.canny.low_ratio.to_string(),
            "canny.high_ratio" => self.canny.high_ratio.to_string(),
            "enhance.tile" => self.clahe.tile.to_string(),
            "enhance.clip" => self.clahe.clip_limit.to_string(),
            "edge.enhance_first" => self.enhance_first.to_string(),
            "chin.min_chain_len" => self.min_chain_len.to_string(),
            "gn.rule" => self.gn_rule.to_string(),
            "regions.margin" => self.region_margin.to_string(),
            "template.max_size" => self.template_max_size.to_string(),
            "template.weight_dir" => show_path(&self.weight_dir),
            "frankfort.sn_offset_deg" => self.sn_offset_deg.to_string(),
            "ransac.seed" => self.ransac.seed.to_string(),
            "ransac.iterations" => self.ransac.iterations.to_string(),
            "ransac.band" => self.ransac.band.to_string(),
            "ransac.min_inliers" => self.ransac.min_inliers.to_string(),
            "ransac.max_gap" => self.ransac.max_gap.to_string(),
            "thresholds.file" => show_path(&self.thresholds_file),
            "split.seed" => self.split_seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", idx + 1))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Defaults, then the file, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            c.apply_text(&text)?;
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.canny.validate()?;
        self.clahe.validate()?;
        if !(self.region_margin >= 0.0 && self.region_margin.is_finite()) {
            return Err(Error::param("regions.margin", "must be non-negative"));
        }
        if self.template_max_size < 3 {
            return Err(Error::param("template.max_size", "must be at least 3"));
        }
        if !self.sn_offset_deg.is_finite() {
            return Err(Error::param("frankfort.sn_offset_deg", "must be finite"));
        }
        if self.ransac.iterations == 0 {
            return Err(Error::param("ransac.iterations", "must be positive"));
        }
        if !(self.ransac.band > 0.0 && self.ransac.band.is_finite()) {
            return Err(Error::param("ransac.band", "must be positive"));
        }
        if !(self.ransac.max_gap > 0.0 && self.ransac.max_gap.is_finite()) {
            return Err(Error::param("ransac.max_gap", "must be positive"));
        }
        if self.ransac.min_inliers < 2 {
            return Err(Error::param("ransac.min_inliers", "must be at least 2"));
        }
        if self.min_chain_len == 0 {
            return Err(Error::param("chin.min_chain_len", "must be positive"));
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# hald config\n");
        for (k, _) in KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k).expect("known key")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }

    pub fn chin_params(&self) -> ChinParams {
        ChinParams {
            canny: self.canny,
            clahe: self.clahe,
            gn_rule: self.gn_rule,
            min_chain_len: self.min_chain_len,
            enhance_first: self.enhance_first,
        }
    }

    pub fn edge_line_params(&self) -> EdgeLineParams {
        EdgeLineParams {
            canny: self.canny,
            clahe: self.clahe,
            ransac: self.ransac,
        }
    }

    pub fn thresholds(&self) -> Result<DegreeThresholds> {
        match &self.thresholds_file {
            Some(p) => DegreeThresholds::load(p),
            None => Ok(DegreeThresholds::shipped()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_text(&c.to_text()).unwrap(), c);
        for (k, _) in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn precedence_is_cli_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "# comment\ncanny.sigma = 2.0\nfacing = left\nsplit.seed=7\n").unwrap();
        let c = PipelineConfig::resolve(
            Some(&path),
            &[("canny.sigma".into(), "1.1".into())],
        )
        .unwrap();
        assert_eq!(c.canny.sigma, 1.1);
        assert_eq!(c.facing, Facing::Left);
        assert_eq!(c.split_seed, 7);
        assert_eq!(c.canny.low_ratio, 0.08);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        let mut c = PipelineConfig::default();
        assert!(matches!(c.set("nope", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("canny.sigma", "abc"), Err(Error::Config(_))));
        assert!(matches!(c.set("gn.rule", "x"), Err(Error::InvalidParameter { .. })));
        for text in ["canny.sigma = -1", "enhance.tile = 4", "canny.low_ratio = 0.5", "garbage"] {
            let e = PipelineConfig::from_text(text).unwrap_err();
            assert_eq!(e.exit_code(), 1, "{text}: {e}");
        }
    }

    #[test]
    fn empty_paths_mean_unset() {
        let c = PipelineConfig::from_text("thresholds.file = \ntemplate.weight_dir =\n").unwrap();
        assert_eq!((&c.thresholds_file, &c.weight_dir), (&None, &None));
        assert_eq!(c.thresholds().unwrap(), DegreeThresholds::shipped());
    }
}
