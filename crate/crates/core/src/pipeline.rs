//! Batch train, detect and evaluate over corpus directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::chin::{detect_chin, ChinDetection};
use crate::config::PipelineConfig;
use crate::dataset::{
    discover_cases, load_annotations_raw, load_case, load_image, save_annotations, split_corpus,
    Case, CaseFiles, CorpusSplit,
};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::imaging::{crop, enhance_adaptive, ClaheParams, Region};
use crate::landmark::{Landmark, LandmarkSet, LineKind, Point, Source};
use crate::lines::{estimate_edge_line, frankfort_line, DegreeThresholds, FrankfortCandidates, Line2D};
use crate::overlay::{Overlay, CHAIN, DETECTED, LINE};
use crate::pnm::{write_bytes, write_ppm};
use crate::regions::{learn_regions, RegionModel, TrainingSample};
use crate::evaluation::{case_errors, per_case_csv, DetectionResult, EvaluationReport};
use crate::wtm::{build_template, load_template, load_weight_map, match_template, save_template, WeightedTemplate};

pub const CONFIG_FILE: &str = "config.txt";
pub const REGIONS_FILE: &str = "model.regions";
pub const SPLIT_FILE: &str = "split.txt";
pub const LINE_LENGTHS_FILE: &str = "line_lengths.txt";
pub const THRESHOLDS_FILE: &str = "derived.degthr";
pub const TEMPLATES_DIR: &str = "templates";
/// Templates needed internally but not reported (Po).
pub const AUX_DIR: &str = "aux";
pub const FAILURES_FILE: &str = "failures.txt";
pub const PER_CASE_FILE: &str = "per_case.csv";

/// Everything `train` learns.
#[derive(Debug, Clone)]
pub struct Model {
    pub regions: RegionModel,
    pub templates: BTreeMap<Landmark, WeightedTemplate>,
    pub split: CorpusSplit,
    pub line_lengths_mm: Vec<(LineKind, f64)>,
}

fn template_dir(model_dir: &Path, l: Landmark) -> PathBuf {
    let group = if Landmark::TEMPLATE_MATCHED.contains(&l) {
        TEMPLATES_DIR
    } else {
        AUX_DIR
    };
    model_dir.join(group).join(l.abbreviation())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

impl Model {
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        self.regions.save(&dir.join(REGIONS_FILE))?;
        write_bytes(&dir.join(SPLIT_FILE), self.split.to_text().as_bytes())?;
        for (l, t) in &self.templates {
            save_template(t, &template_dir(dir, *l))?;
        }
        let mut lengths = String::from("# line lengths v1 (mm)\n");
        for (k, mm) in &self.line_lengths_mm {
            writeln!(lengths, "{} {}", k.name(), mm).expect("string write");
        }
        write_bytes(&dir.join(LINE_LENGTHS_FILE), lengths.as_bytes())?;
        DegreeThresholds::derived(&self.line_lengths_mm)?.save(&dir.join(THRESHOLDS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let regions = RegionModel::load(&dir.join(REGIONS_FILE))?;
        let split = CorpusSplit::from_text(&read_text(&dir.join(SPLIT_FILE))?)?;
        let mut templates = BTreeMap::new();
        for l in Landmark::WITH_TEMPLATE {
            let t = load_template(&template_dir(dir, l))?;
            if t.landmark != l {
                return Err(Error::Config(format!("template dir for {l} holds {}", t.landmark)));
            }
            templates.insert(l, t);
        }
        let mut line_lengths_mm = Vec::new();
        for (i, line) in read_text(&dir.join(LINE_LENGTHS_FILE))?.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: i + 1,
                msg: format!("bad line length `{line}`"),
            };
            let (name, mm) = line.split_once(' ').ok_or_else(bad)?;
            line_lengths_mm.push((name.parse()?, mm.trim().parse().map_err(|_| bad())?));
        }
        Ok(Self {
            regions,
            templates,
            split,
            line_lengths_mm,
        })
    }
}

/// Loads every case of a corpus and checks it has all sixteen landmarks.
pub fn load_corpus(dir: &Path) -> Result<Vec<Case>> {
    let files = discover_cases(dir)?;
    let loaded: Vec<Result<Case>> = files
        .par_iter()
        .map(|f| {
            let case = load_case(f).map_err(|e| e.in_case(&f.id))?;
            for l in Landmark::ALL {
                case.truth.require(l, &case.id)?;
            }
            Ok(case)
        })
        .collect();
    loaded.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub cases: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Landmark with template width and height.
    pub templates: Vec<(Landmark, usize, usize)>,
    pub line_lengths_mm: Vec<(LineKind, f64)>,
}

impl TrainSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "trained on {} of {} cases ({} held out)",
            self.train.len(),
            self.cases,
            self.test.len()
        )
        .expect("string write");
        for (l, w, h) in &self.templates {
            writeln!(s, "  template {:<4} {w}x{h}", l.abbreviation()).expect("string write");
        }
        for (k, mm) in &self.line_lengths_mm {
            writeln!(s, "  line {:<8} {mm:.2} mm", k.name()).expect("string write");
        }
        s
    }
}

fn enhance(img: &GrayImage, clahe: &ClaheParams) -> Result<GrayImage> {
    match clahe.fitted_to(img.width(), img.height()) {
        Some(p) => enhance_adaptive(img, &p),
        None => Ok(img.clone()),
    }
}

fn template_half(du: f64, width: f64, max_size: usize) -> i64 {
    ((du * width).round() as i64).clamp(1, (max_size as i64 - 1) / 2)
}

/// Square crop of side `2 * half + 1` around the landmark, cut from the
/// enhanced search window of a training case.
fn training_crop(
    img: &GrayImage,
    certain: &Region,
    p: Point,
    half: i64,
    clahe: &ClaheParams,
) -> Result<(GrayImage, Point)> {
    let window = certain
        .expand(half, half, half, half)
        .clip_to(img.width(), img.height())
        .ok_or(Error::EmptyIntersection)?;
    let win = crop(img, &window)?;
    let local = enhance(&win.image, clahe)?;
    let (kx, ky) = (p.x.round() as i64 - window.x0, p.y.round() as i64 - window.y0);
    let cell = Region::new(kx - half, ky - half, 2 * half + 1, 2 * half + 1)?
        .clip_to(local.width(), local.height())
        .ok_or(Error::EmptyIntersection)?;
    let c = crop(&local, &cell)?;
    Ok((
        c.image,
        Point::new(p.x - (window.x0 + cell.x0) as f64, p.y - (window.y0 + cell.y0) as f64),
    ))
}

/// Learns regions, templates and line lengths from the train split.
pub fn train_model(cases: &[Case], cfg: &PipelineConfig) -> Result<(Model, TrainSummary)> {
    cfg.validate()?;
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    let split = split_corpus(&ids, cfg.split_seed)?;
    let train: Vec<&Case> = cases.iter().filter(|c| split.is_train(&c.id)).collect();
    let samples: Vec<TrainingSample<'_>> = train
        .iter()
        .map(|c| TrainingSample {
            case: &c.id,
            width: c.image.width(),
            height: c.image.height(),
            landmarks: &c.truth,
        })
        .collect();
    let regions = learn_regions(&samples, &Landmark::ALL, cfg.region_margin)?;
    let mean_width = train.iter().map(|c| c.image.width() as f64).sum::<f64>() / train.len() as f64;

    let built: Vec<Result<WeightedTemplate>> = Landmark::WITH_TEMPLATE
        .par_iter()
        .map(|&l| {
            let entry = regions.entries[l.abbreviation()];
            let half = template_half(entry.du, mean_width, cfg.template_max_size);
            let mut crops = Vec::with_capacity(train.len());
            for c in &train {
                let (w, h) = (c.image.width(), c.image.height());
                let certain = regions.landmark_region(l, w, h).map_err(|e| e.in_case(&c.id))?;
                let p = c.truth.require(l, &c.id)?;
                crops.push(
                    training_crop(&c.image, &certain, p, half, &cfg.clahe).map_err(|e| e.in_case(&c.id))?,
                );
            }
            let t = build_template(l, &crops, None)?;
            match &cfg.weight_dir {
                Some(dir) if dir.join(format!("{}.pgm", l.abbreviation())).is_file() => {
                    let path = dir.join(format!("{}.pgm", l.abbreviation()));
                    let weights = load_weight_map(&path, t.width(), t.height())?;
                    t.with_weights(weights)
                }
                _ => Ok(t),
            }
        })
        .collect();
    let mut templates = BTreeMap::new();
    for t in built {
        let t = t?;
        templates.insert(t.landmark, t);
    }

    let mut line_lengths_mm = Vec::new();
    for k in LineKind::ALL {
        let (a, b) = k.endpoints();
        let mut sum = 0.0;
        for c in &train {
            let d = c.truth.require(a, &c.id)?.distance(&c.truth.require(b, &c.id)?);
            sum += d * c.image.mm_per_pixel();
        }
        line_lengths_mm.push((k, sum / train.len() as f64));
    }

    let summary = TrainSummary {
        cases: cases.len(),
        train: split.train.clone(),
        test: split.test.clone(),
        templates: templates
            .values()
            .map(|t| (t.landmark, t.width(), t.height()))
            .collect(),
        line_lengths_mm: line_lengths_mm.clone(),
    };
    Ok((
        Model {
            regions,
            templates,
            split,
            line_lengths_mm,
        },
        summary,
    ))
}

/// Trains on `cfg.corpus_dir` and writes the model to `cfg.model_dir`.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let cases = load_corpus(&cfg.corpus_dir)?;
    let (model, summary) = train_model(&cases, cfg)?;
    model.save(&cfg.model_dir)?;
    cfg.save(&cfg.model_dir.join(CONFIG_FILE))?;
    Ok(summary)
}

/// One item a detector could not produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemFailure {
    pub case: String,
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct CaseDetection {
    pub result: DetectionResult,
    pub chin: Option<ChinDetection>,
    /// Raw porion match.
    pub po: Option<Point>,
    pub frankfort: Option<FrankfortCandidates>,
    pub failures: Vec<ItemFailure>,
}

fn line_region(model: &RegionModel, k: LineKind, w: usize, h: usize) -> Result<Region> {
    if k == LineKind::PoOr {
        let (a, b) = k.endpoints();
        Ok(model.landmark_region(a, w, h)?.union(&model.landmark_region(b, w, h)?))
    } else {
        model.region_for(k.region_key(), w, h)
    }
}

/// Runs all three mechanisms on one image; failures stay per item.
pub fn detect_image(model: &Model, case: &str, img: &GrayImage, cfg: &PipelineConfig) -> CaseDetection {
    let (w, h) = (img.width(), img.height());
    let mut failures = Vec::new();
    let mut fail = |item: &str, e: &Error| {
        failures.push(ItemFailure {
            case: case.to_string(),
            item: item.to_string(),
            error: e.to_string(),
        })
    };
    let mut points = BTreeMap::new();

    let chin = match detect_chin(img, &model.regions, cfg.facing, &cfg.chin_params()) {
        Ok(c) => {
            points.insert(Landmark::Me, c.me);
            points.insert(Landmark::Pog, c.pog);
            points.insert(Landmark::Gn, c.gn);
            Some(c)
        }
        Err(e) => {
            for l in Landmark::EDGE_TRACED {
                fail(l.abbreviation(), &e);
            }
            None
        }
    };

    let mut matched = BTreeMap::new();
    for (&l, t) in &model.templates {
        let found = model
            .regions
            .landmark_region(l, w, h)
            .and_then(|certain| t.search_window(&certain, w, h))
            .and_then(|window| match_template(t, img, &window, Some(&cfg.clahe)));
        match found {
            Ok(m) => {
                matched.insert(l, m.point);
            }
            Err(e) => fail(l.abbreviation(), &e),
        }
    }
    for l in Landmark::TEMPLATE_MATCHED {
        if let Some(&p) = matched.get(&l) {
            points.insert(l, p);
        }
    }

    let mut lines = BTreeMap::new();
    let frankfort = match (
        matched.get(&Landmark::Or),
        matched.get(&Landmark::Po),
        matched.get(&Landmark::S),
        matched.get(&Landmark::N),
    ) {
        (Some(&or), Some(&po), Some(&s), Some(&n)) => {
            match frankfort_line(or, po, s, n, cfg.facing, cfg.sn_offset_deg) {
                Ok((line, cand)) => {
                    lines.insert(LineKind::PoOr, line);
                    Some(cand)
                }
                Err(e) => {
                    fail(LineKind::PoOr.name(), &e);
                    None
                }
            }
        }
        _ => {
            fail(
                LineKind::PoOr.name(),
                &Error::Config("needs Or, Po, S and N matches".into()),
            );
            None
        }
    };

    let params = cfg.edge_line_params();
    for k in LineKind::EDGE_FITTED {
        let fitted = model
            .regions
            .region_for(k.region_key(), w, h)
            .and_then(|region| estimate_edge_line(img, &region, &params));
        match fitted {
            Ok(line) => {
                lines.insert(k, line);
            }
            Err(e) => fail(k.name(), &e),
        }
    }

    CaseDetection {
        result: DetectionResult {
            case: case.to_string(),
            points,
            lines,
        },
        chin,
        po: matched.get(&Landmark::Po).copied(),
        frankfort,
        failures,
    }
}

pub fn lines_text(lines: &BTreeMap<LineKind, Line2D>) -> String {
    let mut out = String::new();
    for (k, l) in lines {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            k.name(),
            l.point.x,
            l.point.y,
            l.direction.0,
            l.direction.1,
            l.inclination_deg
        )
        .expect("string write");
    }
    out
}

pub fn parse_lines_text(text: &str) -> Result<BTreeMap<LineKind, Line2D>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Parse {
            line: i + 1,
            msg: format!("expected `name x y dx dy inclination_deg`, got `{line}`"),
        };
        if fields.len() != 6 {
            return Err(bad());
        }
        let kind: LineKind = fields[0].parse()?;
        let nums: Vec<f64> = fields[1..5]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        out.insert(kind, Line2D::new(Point::new(nums[0], nums[1]), nums[2], nums[3])?);
    }
    Ok(out)
}

fn render_overlay(
    model: &Model,
    img: &GrayImage,
    det: &CaseDetection,
    truth: Option<&LandmarkSet>,
) -> Overlay {
    let (w, h) = (img.width(), img.height());
    let mut o = Overlay::new(img);
    if let Some(c) = &det.chin {
        o.pixels(&c.chain.points, CHAIN);
    }
    for (k, line) in &det.result.lines {
        if let Ok(region) = line_region(&model.regions, *k, w, h) {
            o.line_in(line, &region, LINE);
        }
    }
    if let Some(t) = truth {
        o.experts(t);
    }
    for p in det.result.points.values() {
        o.cross(*p, DETECTED);
    }
    o
}

/// Writes `<id>.det.lmk`, `<id>.lines.txt` and `<id>.overlay.ppm`.
fn write_case_outputs(
    out: &Path,
    model: &Model,
    img: &GrayImage,
    det: &CaseDetection,
    truth: Option<&LandmarkSet>,
) -> Result<()> {
    let id = &det.result.case;
    let mut set = LandmarkSet::new(Source::Detected);
    for (l, p) in &det.result.points {
        set.set(*l, *p);
    }
    save_annotations(&out.join(format!("{id}.det.lmk")), &set, Some(img.mm_per_pixel()))?;
    write_bytes(
        &out.join(format!("{id}.lines.txt")),
        lines_text(&det.result.lines).as_bytes(),
    )?;
    write_ppm(
        &out.join(format!("{id}.overlay.ppm")),
        &render_overlay(model, img, det, truth).canvas,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectSummary {
    pub detected: Vec<String>,
    /// Train-split cases left out.
    pub skipped: Vec<String>,
    pub failures: Vec<ItemFailure>,
}

impl DetectSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "detected {} cases ({} train cases skipped), {} item failures\n",
            self.detected.len(),
            self.skipped.len(),
            self.failures.len()
        );
        for f in &self.failures {
            writeln!(s, "  {} {}: {}", f.case, f.item, f.error).expect("string write");
        }
        s
    }
}

fn input_cases(input: &Path) -> Result<Vec<CaseFiles>> {
    if input.is_dir() {
        return discover_cases(input);
    }
    let id = input
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad input path {}", input.display())))?
        .to_string();
    let dir = input.parent().unwrap_or(Path::new("."));
    let annotations = discover_cases(dir)?
        .into_iter()
        .find(|c| c.id == id)
        .map(|c| c.annotations)
        .unwrap_or_default();
    Ok(vec![CaseFiles {
        id,
        image: input.to_path_buf(),
        annotations,
    }])
}

/// Detects every image of `input` (a directory or one image file) into
/// `out`. Train-split cases are skipped unless `allow_train`.
pub fn cmd_detect(
    cfg: &PipelineConfig,
    model_dir: &Path,
    input: &Path,
    out: &Path,
    allow_train: bool,
) -> Result<DetectSummary> {
    cfg.validate()?;
    let model = Model::load(model_dir)?;
    let (run, skipped): (Vec<CaseFiles>, Vec<CaseFiles>) = input_cases(input)?
        .into_iter()
        .partition(|c| allow_train || !model.split.is_train(&c.id));
    create_dir(out)?;
    let outcomes: Vec<Result<Vec<ItemFailure>>> = run
        .par_iter()
        .map(|files| {
            let img = match load_image(&files.image) {
                Ok(img) => img,
                Err(e) => {
                    return Ok(vec![ItemFailure {
                        case: files.id.clone(),
                        item: "image".into(),
                        error: e.to_string(),
                    }])
                }
            };
            let truth = (!files.annotations.is_empty())
                .then(|| load_case(files).ok().map(|c| c.truth))
                .flatten();
            let det = detect_image(&model, &files.id, &img, cfg);
            write_case_outputs(out, &model, &img, &det, truth.as_ref())
                .map_err(|e| e.in_case(&files.id))?;
            Ok(det.failures)
        })
        .collect();
    let mut failures = Vec::new();
    for o in outcomes {
        failures.extend(o?);
    }
    let mut text = String::new();
    for f in &failures {
        writeln!(text, "{}\t{}\t{}", f.case, f.item, f.error).expect("string write");
    }
    write_bytes(&out.join(FAILURES_FILE), text.as_bytes())?;
    cfg.save(&out.join(CONFIG_FILE))?;
    Ok(DetectSummary {
        detected: run.into_iter().map(|c| c.id).collect(),
        skipped: skipped.into_iter().map(|c| c.id).collect(),
        failures,
    })
}

/// Reads `<id>.det.lmk` and `<id>.lines.txt` back.
pub fn load_detection(dir: &Path, id: &str) -> Result<DetectionResult> {
    let (set, _) = load_annotations_raw(&dir.join(format!("{id}.det.lmk")), Source::Detected)?;
    let lines_path = dir.join(format!("{id}.lines.txt"));
    let lines = if lines_path.is_file() {
        parse_lines_text(&read_text(&lines_path)?)?
    } else {
        BTreeMap::new()
    };
    Ok(DetectionResult {
        case: id.to_string(),
        points: set.iter().filter(|(l, _)| Landmark::REPORTED.contains(l)).collect(),
        lines,
    })
}

/// Ids with a `<id>.det.lmk` in `dir`, sorted.
pub fn detection_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::UnreadableFile {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut ids = Vec::new();
    for entry in entries {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(".det.lmk")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Scores detections against the expert baseline and writes the report.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    det_dir: &Path,
    truth_dir: &Path,
    model_dir: &Path,
    out: &Path,
    allow_train: bool,
) -> Result<EvaluationReport> {
    let split = CorpusSplit::from_text(&read_text(&model_dir.join(SPLIT_FILE))?)?;
    let ids = detection_ids(det_dir)?;
    let truth: BTreeMap<String, CaseFiles> = discover_cases(truth_dir)?
        .into_iter()
        .filter(|c| !c.annotations.is_empty())
        .map(|c| (c.id.clone(), c))
        .collect();
    let matching: Vec<&String> = ids.iter().filter(|id| truth.contains_key(*id)).collect();
    if matching.is_empty() {
        return Err(Error::NoMatchingCases);
    }
    if !allow_train {
        if let Some(id) = matching.iter().find(|id| split.is_train(id)) {
            return Err(Error::TrainCaseInEvaluation(id.to_string()));
        }
    }
    let per_case: Vec<Result<_>> = matching
        .par_iter()
        .map(|id| {
            let case = load_case(&truth[*id]).map_err(|e| e.in_case(id))?;
            let det = load_detection(det_dir, id).map_err(|e| e.in_case(id))?;
            case_errors(&det, &case.truth, case.image.mm_per_pixel())
        })
        .collect();
    let per_case: Vec<_> = per_case.into_iter().collect::<Result<_>>()?;
    let report = EvaluationReport::build(&per_case, &cfg.thresholds()?)?;
    create_dir(out)?;
    report.emit(out)?;
    write_bytes(&out.join(PER_CASE_FILE), per_case_csv(&per_case).as_bytes())?;
    cfg.save(&out.join(CONFIG_FILE))?;
    Ok(report)
}
