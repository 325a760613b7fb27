//! Error metrics, success-rate tables and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::{Landmark, LandmarkSet, LineKind, Point};
use crate::lines::{angle_between_deg, DegreeThresholds, Line2D};
use crate::pnm::write_bytes;

/// Millimetre thresholds for point landmarks.
pub const MM_THRESHOLDS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// CSV header of `report.csv`.
pub const CSV_HEADER: &str = "item,kind,mean_err,sd_err,unit,p1,p2,p3,p4,n";

/// Which mechanism produced an output item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    EdgeTracing,
    TemplateMatching,
    AnalysisEstimation,
}

impl Provenance {
    pub fn of_landmark(l: Landmark) -> Option<Self> {
        if Landmark::EDGE_TRACED.contains(&l) {
            Some(Provenance::EdgeTracing)
        } else if Landmark::TEMPLATE_MATCHED.contains(&l) {
            Some(Provenance::TemplateMatching)
        } else {
            None
        }
    }
}

/// Detector output for one case. Items the detector could not produce are
/// absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionResult {
    pub case: String,
    pub points: BTreeMap<Landmark, Point>,
    pub lines: BTreeMap<LineKind, Line2D>,
}

impl DetectionResult {
    pub fn provenance(&self) -> BTreeMap<String, Provenance> {
        let mut out = BTreeMap::new();
        for &l in self.points.keys() {
            if let Some(p) = Provenance::of_landmark(l) {
                out.insert(l.to_string(), p);
            }
        }
        for k in self.lines.keys() {
            out.insert(k.to_string(), Provenance::AnalysisEstimation);
        }
        out
    }
}

pub fn point_error_mm(detected: Point, truth: Point, mm_per_pixel: f64) -> f64 {
    detected.distance(&truth) * mm_per_pixel
}

pub fn line_error_deg(detected: &Line2D, truth: &Line2D) -> f64 {
    angle_between_deg(detected, truth)
}

/// Expert line through the two annotated endpoints.
pub fn truth_line(truth: &LandmarkSet, line: LineKind, case: &str) -> Result<Line2D> {
    let (a, b) = line.endpoints();
    Line2D::through(truth.require(a, case)?, truth.require(b, case)?)
}

/// Per-item errors of one case; `None` marks an item the detector missed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaseErrors {
    pub case: String,
    pub points: BTreeMap<Landmark, Option<f64>>,
    pub lines: BTreeMap<LineKind, Option<f64>>,
}

pub fn case_errors(det: &DetectionResult, truth: &LandmarkSet, mm_per_pixel: f64) -> Result<CaseErrors> {
    let mut out = CaseErrors {
        case: det.case.clone(),
        ..CaseErrors::default()
    };
    for l in Landmark::REPORTED {
        let t = truth.require(l, &det.case)?;
        out.points
            .insert(l, det.points.get(&l).map(|&p| point_error_mm(p, t, mm_per_pixel)));
    }
    for k in LineKind::ALL {
        let t = truth_line(truth, k, &det.case)?;
        out.lines.insert(k, det.lines.get(&k).map(|d| line_error_deg(d, &t)));
    }
    Ok(out)
}

/// Share of cases with error strictly below each threshold; misses count
/// as failures.
pub fn success_ratios(errors: &[Option<f64>], thresholds: [f64; 4]) -> [f64; 4] {
    let n = errors.len().max(1) as f64;
    thresholds.map(|t| errors.iter().filter(|e| matches!(e, Some(v) if *v < t)).count() as f64 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Point,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub item: String,
    pub kind: ItemKind,
    /// `None` when every case missed the item.
    pub mean_err: Option<f64>,
    pub sd_err: Option<f64>,
    pub unit: String,
    pub thresholds: [f64; 4],
    pub ratios: [f64; 4],
    pub n: usize,
    pub failed: usize,
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn item_row(
    item: String,
    kind: ItemKind,
    errors: &[Option<f64>],
    thresholds: [f64; 4],
) -> ItemRow {
    let found: Vec<f64> = errors.iter().flatten().copied().collect();
    let stats = mean_sd(&found);
    ItemRow {
        item,
        kind,
        mean_err: stats.map(|s| s.0),
        sd_err: stats.map(|s| s.1),
        unit: match kind {
            ItemKind::Point => "mm".into(),
            ItemKind::Line => "deg".into(),
        },
        thresholds,
        ratios: success_ratios(errors, thresholds),
        n: errors.len(),
        failed: errors.len() - found.len(),
    }
}

/// One row per reported point, then one per line.
pub fn success_table(per_case: &[CaseErrors], thresholds: &DegreeThresholds) -> Result<Vec<ItemRow>> {
    if per_case.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut rows = Vec::new();
    for l in Landmark::REPORTED {
        let errs: Vec<Option<f64>> = per_case
            .iter()
            .map(|c| c.points.get(&l).copied().flatten())
            .collect();
        rows.push(item_row(l.to_string(), ItemKind::Point, &errs, MM_THRESHOLDS));
    }
    for k in LineKind::ALL {
        let t = thresholds
            .get(k)
            .ok_or_else(|| Error::Config(format!("no degree thresholds for {k}")))?;
        let errs: Vec<Option<f64>> = per_case
            .iter()
            .map(|c| c.lines.get(&k).copied().flatten())
            .collect();
        rows.push(item_row(k.to_string(), ItemKind::Line, &errs, t));
    }
    Ok(rows)
}

/// Unweighted column means.
pub fn aggregate_row(rows: &[[f64; 4]]) -> [f64; 4] {
    let n = rows.len().max(1) as f64;
    let mut out = [0.0; 4];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = rows.iter().map(|r| r[k]).sum::<f64>() / n;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub cases: usize,
    pub items: Vec<ItemRow>,
    pub aggregate: Aggregate,
    /// Mean error over point items (mm) and line items (degrees).
    pub mean_point_err_mm: Option<f64>,
    pub mean_line_err_deg: Option<f64>,
}

impl EvaluationReport {
    pub fn build(per_case: &[CaseErrors], thresholds: &DegreeThresholds) -> Result<Self> {
        let items = success_table(per_case, thresholds)?;
        let ratios: Vec<[f64; 4]> = items.iter().map(|r| r.ratios).collect();
        let [p1, p2, p3, p4] = aggregate_row(&ratios);
        let kind_mean = |kind: ItemKind| {
            let v: Vec<f64> = items
                .iter()
                .filter(|r| r.kind == kind)
                .filter_map(|r| r.mean_err)
                .collect();
            mean_sd(&v).map(|s| s.0)
        };
        Ok(Self {
            cases: per_case.len(),
            mean_point_err_mm: kind_mean(ItemKind::Point),
            mean_line_err_deg: kind_mean(ItemKind::Line),
            items,
            aggregate: Aggregate { p1, p2, p3, p4 },
        })
    }

    pub fn item(&self, name: &str) -> Option<&ItemRow> {
        self.items.iter().find(|r| r.item == name)
    }

    pub fn to_csv(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.4}"));
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.items {
            let kind = match r.kind {
                ItemKind::Point => "point",
                ItemKind::Line => "line",
            };
            writeln!(
                out,
                "{},{},{},{},{},{:.4},{:.4},{:.4},{:.4},{}",
                r.item,
                kind,
                num(r.mean_err),
                num(r.sd_err),
                r.unit,
                r.ratios[0],
                r.ratios[1],
                r.ratios[2],
                r.ratios[3],
                r.n
            )
            .expect("string write");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Writes `report.csv` and `report.json`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_bytes(&dir.join("report.csv"), self.to_csv().as_bytes())?;
        write_bytes(&dir.join("report.json"), self.to_json().as_bytes())
    }

    /// Percent table, one row per item.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<10} {:>12} {:>8} {:>8} {:>8} {:>8}",
            "item", "mean±sd", "<1", "<2", "<3", "<4"
        )
        .expect("string write");
        for r in &self.items {
            let stats = match (r.mean_err, r.sd_err) {
                (Some(m), Some(s)) => format!("{m:.2}±{s:.2}{}", if r.unit == "mm" { "mm" } else { "°" }),
                _ => "n/a".into(),
            };
            writeln!(
                out,
                "{:<10} {:>12} {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}%",
                r.item,
                stats,
                100.0 * r.ratios[0],
                100.0 * r.ratios[1],
                100.0 * r.ratios[2],
                100.0 * r.ratios[3]
            )
            .expect("string write");
        }
        let a = &self.aggregate;
        writeln!(
            out,
            "{:<10} {:>12} {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}%",
            "All",
            "",
            100.0 * a.p1,
            100.0 * a.p2,
            100.0 * a.p3,
            100.0 * a.p4
        )
        .expect("string write");
        writeln!(out, "cases: {}", self.cases).expect("string write");
        out
    }
}

/// Per-case errors as CSV: `case,item,error,unit`, misses as `NaN`.
pub fn per_case_csv(per_case: &[CaseErrors]) -> String {
    let mut out = String::from("case,item,error,unit\n");
    let num = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| format!("{x:.4}"));
    for c in per_case {
        for (l, e) in &c.points {
            writeln!(out, "{},{},{},mm", c.case, l, num(*e)).expect("string write");
        }
        for (k, e) in &c.lines {
            writeln!(out, "{},{},{},deg", c.case, k, num(*e)).expect("string write");
        }
    }
    out
}

/// Published results, kept for documentation and side-by-side printing.
pub mod reference {
    /// Mean and SD per item: points in mm, lines in degrees.
    pub const MEAN_ERRORS: [(&str, f64, f64); 15] = [
        ("Me", 0.9, 0.6),
        ("Gn", 1.2, 0.8),
        ("Pog", 1.4, 1.2),
        ("S", 1.4, 2.2),
        ("A", 2.2, 1.5),
        ("B", 1.4, 1.8),
        ("N", 1.6, 1.1),
        ("ANS", 2.9, 1.7),
        ("PNS", 2.1, 1.8),
        ("Or", 2.7, 1.4),
        ("UIT", 1.5, 1.5),
        ("Po-Or", 1.9, 1.5),
        ("Go-Me", 2.1, 1.7),
        ("UIT-UIA", 4.6, 3.5),
        ("LIT-LIA", 2.7, 2.4),
    ];

    /// Success percentages at the four thresholds.
    pub const SUCCESS_RATES: [(&str, [f64; 4]); 15] = [
        ("UIT", [60.0, 75.0, 82.5, 90.0]),
        ("GN", [75.0, 85.0, 92.5, 95.0]),
        ("ME", [70.0, 92.5, 97.5, 97.5]),
        ("POG", [42.5, 62.5, 92.5, 95.0]),
        ("PNS", [30.0, 70.0, 82.5, 87.5]),
        ("ANS", [5.0, 45.0, 70.0, 75.0]),
        ("B", [55.0, 82.5, 92.5, 92.5]),
        ("A", [30.0, 60.0, 80.0, 85.0]),
        ("OR", [5.0, 40.0, 62.0, 80.0]),
        ("N", [35.0, 70.0, 80.0, 87.5]),
        ("S", [65.0, 92.5, 95.0, 95.0]),
        ("PO-OR", [30.0, 40.0, 52.5, 70.0]),
        ("UIT-UIA", [20.0, 50.0, 72.5, 85.0]),
        ("GO-ME", [27.5, 45.0, 67.5, 80.0]),
        ("LIT-LIA", [52.5, 72.5, 87.5, 95.0]),
    ];

    /// The reference "All landmarks" row.
    pub const SUCCESS_RATES_ALL: [f64; 4] = [38.83, 65.50, 80.47, 87.34];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmark::Source;
    use proptest::prelude::*;

    #[test]
    fn point_error_examples() {
        let p = Point::new(10.0, 20.0);
        assert_eq!(point_error_mm(p, p, 0.1), 0.0);
        assert!((point_error_mm(Point::new(13.0, 24.0), p, 0.1) - 0.5).abs() < 1e-12);
        let shift = |q: Point| Point::new(q.x + 7.5, q.y - 3.0);
        assert!(
            (point_error_mm(shift(Point::new(13.0, 24.0)), shift(p), 0.1) - 0.5).abs() < 1e-12
        );
    }

    #[test]
    fn line_error_examples() {
        let a = Line2D::from_inclination(Point::default(), 89.0);
        let b = Line2D::from_inclination(Point::new(5.0, 5.0), -89.0);
        assert_eq!(line_error_deg(&a, &a), 0.0);
        assert!((line_error_deg(&a, &b) - 2.0).abs() < 1e-9);
        assert_eq!(line_error_deg(&a, &b), line_error_deg(&b, &a));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(success_ratios(&[Some(0.5)], MM_THRESHOLDS), [1.0; 4]);
        let errs = [Some(0.5), Some(1.5), Some(2.5), Some(3.5)];
        assert_eq!(success_ratios(&errs, MM_THRESHOLDS), [0.25, 0.5, 0.75, 1.0]);
        let po_or = DegreeThresholds::shipped().get(LineKind::PoOr).unwrap();
        assert_eq!(success_ratios(&[Some(1.0), Some(2.0)], po_or), [0.0, 0.5, 1.0, 1.0]);
        // strict comparison and misses
        assert_eq!(success_ratios(&[Some(1.0), None], MM_THRESHOLDS), [0.0, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn aggregate_of_reference_rows() {
        let rows: Vec<[f64; 4]> = reference::SUCCESS_RATES.iter().map(|r| r.1).collect();
        let agg = aggregate_row(&rows);
        assert!((agg[1] - 65.50).abs() < 1e-9);
        assert!((agg[2] - 80.47).abs() < 0.01);
        assert!((agg[3] - reference::SUCCESS_RATES_ALL[3]).abs() <= 0.01 + 1e-9);
        assert!((agg[0] - 40.1667).abs() < 1e-4);
        assert!((agg[0] - reference::SUCCESS_RATES_ALL[0]).abs() > 1.0);
    }

    fn truth() -> LandmarkSet {
        let mut s = LandmarkSet::new(Source::Expert);
        for (i, l) in Landmark::ALL.iter().enumerate() {
            s.insert(*l, Point::new(10.0 + 13.0 * i as f64, 5.0 + 7.0 * (i * i % 11) as f64))
                .unwrap();
        }
        s
    }

    fn detection(truth: &LandmarkSet, dx: f64) -> DetectionResult {
        let mut d = DetectionResult {
            case: "c".into(),
            ..DetectionResult::default()
        };
        for l in Landmark::REPORTED {
            let p = truth.get(l).unwrap();
            d.points.insert(l, Point::new(p.x + dx, p.y));
        }
        for k in LineKind::ALL {
            d.lines.insert(k, truth_line(truth, k, "c").unwrap());
        }
        d
    }

    #[test]
    fn report_rows_and_files() {
        let t = truth();
        let cases: Vec<CaseErrors> = [0.0, 5.0, 15.0, 25.0]
            .iter()
            .map(|&dx| case_errors(&detection(&t, dx), &t, 0.1).unwrap())
            .collect();
        let report = EvaluationReport::build(&cases, &DegreeThresholds::shipped()).unwrap();
        assert_eq!(report.items.len(), 15);
        let me = report.item("Me").unwrap();
        assert_eq!(me.ratios, [0.5, 0.75, 1.0, 1.0]);
        assert!((me.mean_err.unwrap() - 1.125).abs() < 1e-12);
        let sd = ((1.125f64.powi(2) + 0.625f64.powi(2) + 0.375f64.powi(2) + 1.375f64.powi(2)) / 4.0).sqrt();
        assert!((me.sd_err.unwrap() - sd).abs() < 1e-12);
        assert_eq!(report.item("Go-Me").unwrap().ratios, [1.0; 4]);

        let dir = tempfile::tempdir().unwrap();
        report.emit(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert!(csv.contains("\nMe,point,1.1250,"));
        assert!(csv.contains(",mm,0.5000,0.7500,1.0000,1.0000,4\n"));
        let json = std::fs::read(dir.path().join("report.json")).unwrap();
        report.emit(dir.path()).unwrap();
        assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), json);
        assert_eq!(std::fs::read_to_string(dir.path().join("report.csv")).unwrap(), csv);
        let back = EvaluationReport::from_json(std::str::from_utf8(&json).unwrap()).unwrap();
        assert_eq!(back, report);
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert!(v["aggregate"]["p4"].is_number());
    }

    #[test]
    fn missing_items_count_as_failures() {
        let t = truth();
        let mut d = detection(&t, 0.0);
        d.points.remove(&Landmark::S);
        d.lines.remove(&LineKind::PoOr);
        let cases = vec![case_errors(&d, &t, 0.1).unwrap()];
        let report = EvaluationReport::build(&cases, &DegreeThresholds::shipped()).unwrap();
        let s = report.item("S").unwrap();
        assert_eq!((s.ratios, s.failed, s.mean_err), ([0.0; 4], 1, None));
        assert!(report.to_csv().contains("\nS,point,NaN,NaN,mm,0.0000,0.0000,0.0000,0.0000,1\n"));
        assert_eq!(EvaluationReport::from_json(&report.to_json()).unwrap(), report);
    }

    #[test]
    fn empty_evaluation() {
        assert!(matches!(
            EvaluationReport::build(&[], &DegreeThresholds::shipped()),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn provenance_groups() {
        let t = truth();
        let p = detection(&t, 0.0).provenance();
        assert_eq!(p["Me"], Provenance::EdgeTracing);
        assert_eq!(p["S"], Provenance::TemplateMatching);
        assert_eq!(p["LIT-LIA"], Provenance::AnalysisEstimation);
        assert_eq!(p.len(), 15);
    }

    proptest! {
        #[test]
        fn ratios_are_monotone(errs in proptest::collection::vec(proptest::option::weighted(0.9, 0.0f64..6.0), 1..40)) {
            let r = success_ratios(&errs, MM_THRESHOLDS);
            prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn statistics_ignore_case_order(errs in proptest::collection::vec(0.0f64..6.0, 1..30), rot in 0usize..30) {
            let mut other = errs.clone();
            let k = rot % other.len();
            other.rotate_left(k);
            other.reverse();
            prop_assert_eq!(mean_sd(&errs), mean_sd(&other));
            let a: Vec<Option<f64>> = errs.iter().copied().map(Some).collect();
            let b: Vec<Option<f64>> = other.iter().copied().map(Some).collect();
            prop_assert_eq!(success_ratios(&a, MM_THRESHOLDS), success_ratios(&b, MM_THRESHOLDS));
        }

        #[test]
        fn aggregate_is_column_mean(rows in proptest::collection::vec(proptest::array::uniform4(0.0f64..1.0), 1..20)) {
            let agg = aggregate_row(&rows);
            for k in 0..4 {
                let want = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
                prop_assert!((agg[k] - want).abs() < 1e-12);
            }
        }
    }
}
