//! Corpus ingestion: radiographs, `.lmk` annotation files, expert averaging
//! and the train/test split.
//!
//! Annotation files are UTF-8 text. An optional first line
//! `# mm_per_pixel=<decimal>` carries the calibration; every other line
//! starting with `#` is a comment, and data lines are
//! `<Name>\t<x>\t<y>` in pixel coordinates (origin top-left, y down).

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{GrayImage, DEFAULT_MM_PER_PIXEL};
use crate::landmark::{Landmark, LandmarkSet, Point, Source};
use crate::pnm;

const CALIBRATION_PREFIX: &str = "# mm_per_pixel=";

/// Parses annotation text; the calibration is `None` when the header is absent.
pub fn parse_annotations(text: &str, source: Source) -> Result<(LandmarkSet, Option<f64>)> {
    let mut set = LandmarkSet::new(source);
    let mut mm = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(CALIBRATION_PREFIX) {
            if line_no == 1 {
                let value: f64 = rest.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad calibration `{}`", rest.trim()),
                })?;
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "calibration must be positive".into(),
                    });
                }
                mm = Some(value);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `<name>\\t<x>\\t<y>`, found {} field(s)", fields.len()),
            });
        }
        let name: Landmark = fields[0].trim().parse()?;
        let coord = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad coordinate `{s}`"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line: line_no,
                    msg: format!("non-finite coordinate `{s}`"),
                })
            }
        };
        let point = Point::new(coord(fields[1])?, coord(fields[2])?);
        set.insert(name, point)?;
    }
    Ok((set, mm))
}

pub fn format_annotations(set: &LandmarkSet, mm_per_pixel: Option<f64>) -> String {
    let mut out = String::new();
    if let Some(mm) = mm_per_pixel {
        out.push_str(&format!("{CALIBRATION_PREFIX}{mm}\n"));
    }
    for (name, p) in set.iter() {
        out.push_str(&format!("{}\t{}\t{}\n", name, p.x, p.y));
    }
    out
}

/// Loads a `.lmk` file, defaulting the calibration to 0.1 mm/px.
pub fn load_annotations(path: &Path) -> Result<(LandmarkSet, f64)> {
    let (set, mm) = load_annotations_raw(path, Source::Expert)?;
    Ok((set, mm.unwrap_or(DEFAULT_MM_PER_PIXEL)))
}

pub fn load_annotations_raw(path: &Path, source: Source) -> Result<(LandmarkSet, Option<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_annotations(&text, source)
}

pub fn save_annotations(path: &Path, set: &LandmarkSet, mm_per_pixel: Option<f64>) -> Result<()> {
    pnm::write_bytes(path, format_annotations(set, mm_per_pixel).as_bytes())
}

/// Loads a radiograph; calibration comes from the sibling annotation header
/// (`<stem>.lmk`, then `<stem>.a.lmk`) and defaults to 0.1 mm/px.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let img = pnm::read_gray(path)?;
    let mm = sidecar_calibration(path).unwrap_or(DEFAULT_MM_PER_PIXEL);
    img.with_mm_per_pixel(mm)
}

pub fn save_image(path: &Path, img: &GrayImage) -> Result<()> {
    pnm::write_pgm(path, img)
}

fn sidecar_calibration(image_path: &Path) -> Option<f64> {
    let stem = image_path.file_stem()?.to_str()?;
    let dir = image_path.parent().unwrap_or_else(|| Path::new("."));
    [format!("{stem}.lmk"), format!("{stem}.a.lmk")]
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|text| {
            let first = text.lines().next()?;
            first.strip_prefix(CALIBRATION_PREFIX)?.trim().parse().ok()
        })
}

/// Coordinate-wise mean of two expert sets over identical landmark names.
pub fn average_expert_sets(a: &LandmarkSet, b: &LandmarkSet) -> Result<LandmarkSet> {
    average_sets(&[a, b])
}

pub fn average_sets(sets: &[&LandmarkSet]) -> Result<LandmarkSet> {
    let first = sets.first().ok_or(Error::NameMismatch)?;
    let names: Vec<Landmark> = first.names().collect();
    for s in &sets[1..] {
        if s.names().collect::<Vec<_>>() != names {
            return Err(Error::NameMismatch);
        }
    }
    let n = sets.len() as f64;
    let mut out = LandmarkSet::new(first.source);
    for name in names {
        let (sx, sy) = sets.iter().fold((0.0, 0.0), |(sx, sy), s| {
            let p = s.get(name).expect("names checked above");
            (sx + p.x, sy + p.y)
        });
        out.set(name, Point::new(sx / n, sy / n));
    }
    Ok(out)
}

/// Train/test partition of case ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl CorpusSplit {
    pub fn is_train(&self, id: &str) -> bool {
        self.train.iter().any(|t| t == id)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# split v1 seed={}\n", self.seed);
        for id in &self.train {
            out.push_str(&format!("train\t{id}\n"));
        }
        for id in &self.test {
            out.push_str(&format!("test\t{id}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut split = CorpusSplit {
            train: Vec::new(),
            test: Vec::new(),
            seed: 0,
        };
        for (idx, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("# split v1 seed=") {
                split.seed = rest.trim().parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: "bad split seed".into(),
                })?;
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            match line.split_once('\t') {
                Some(("train", id)) => split.train.push(id.to_string()),
                Some(("test", id)) => split.test.push(id.to_string()),
                _ => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: format!("bad split line `{line}`"),
                    })
                }
            }
        }
        Ok(split)
    }
}

/// Seeded shuffle, first half to train; an odd extra case goes to train.
pub fn split_corpus(case_ids: &[String], seed: u64) -> Result<CorpusSplit> {
    if case_ids.len() < 2 {
        return Err(Error::TooFewCases(case_ids.len()));
    }
    let mut ids = case_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::TooFewCases(ids.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ids.len().div_ceil(2);
    let test = ids.split_off(n_train);
    Ok(CorpusSplit {
        train: ids,
        test,
        seed,
    })
}

/// Files belonging to one case of a corpus directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseFiles {
    pub id: String,
    pub image: PathBuf,
    /// Expert annotation files: one `.lmk`, or `.a.lmk` and `.b.lmk`.
    pub annotations: Vec<PathBuf>,
}

/// Lists `<id>.pgm` / `<id>.png` images in `dir`, sorted by id, with their
/// annotation files when present.
pub fn discover_cases(dir: &Path) -> Result<Vec<CaseFiles>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::UnreadableFile {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut cases = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !(ext.eq_ignore_ascii_case("pgm") || ext.eq_ignore_ascii_case("png")) {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        let single = dir.join(format!("{id}.lmk"));
        let pair = [dir.join(format!("{id}.a.lmk")), dir.join(format!("{id}.b.lmk"))];
        let annotations = if pair.iter().all(|p| p.is_file()) {
            pair.to_vec()
        } else if single.is_file() {
            vec![single]
        } else {
            Vec::new()
        };
        cases.push(CaseFiles {
            id,
            image: path,
            annotations,
        });
    }
    cases.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(cases)
}

/// A radiograph with its expert baseline.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub image: GrayImage,
    pub truth: LandmarkSet,
}

/// Loads the image and averaged expert baseline of a case, taking the
/// calibration from the first annotation header that has one.
pub fn load_case(files: &CaseFiles) -> Result<Case> {
    if files.annotations.is_empty() {
        return Err(Error::MissingLandmark {
            case: files.id.clone(),
            name: "<annotation file>".into(),
        });
    }
    let mut sets = Vec::new();
    let mut mm = None;
    for path in &files.annotations {
        let (set, cal) = load_annotations_raw(path, Source::Expert)?;
        mm = mm.or(cal);
        sets.push(set);
    }
    let refs: Vec<&LandmarkSet> = sets.iter().collect();
    let truth = average_sets(&refs)?;
    let image = pnm::read_gray(&files.image)?.with_mm_per_pixel(mm.unwrap_or(DEFAULT_MM_PER_PIXEL))?;
    truth.validate_bounds(image.width(), image.height())?;
    Ok(Case {
        id: files.id.clone(),
        image,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_line_with_calibration() {
        let (set, mm) = parse_annotations("# mm_per_pixel=0.1\nMe\t412.5\t980.0\n", Source::Expert)
            .unwrap();
        assert_eq!(mm, Some(0.1));
        assert_eq!(set.len(), 1);
        assert_eq!(set.get(Landmark::Me), Some(Point::new(412.5, 980.0)));
    }

    #[test]
    fn duplicate_and_unknown_names_rejected() {
        assert!(matches!(
            parse_annotations("Me\t1\t1\nMe\t2\t2\n", Source::Expert),
            Err(Error::DuplicateLandmark(n)) if n == "Me"
        ));
        assert!(matches!(
            parse_annotations("Xx\t1\t1\n", Source::Expert),
            Err(Error::UnknownLandmark(n)) if n == "Xx"
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_annotations("# c\nMe\t1\n", Source::Expert) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_annotations("Me\t1\tabc\n", Source::Expert) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_annotations("# mm_per_pixel=-2\n", Source::Expert),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_calibration_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("case01.lmk");
        fs::write(&path, "S\t10\t20\n# trailing comment\n").unwrap();
        let (set, mm) = load_annotations(&path).unwrap();
        assert_eq!(mm, DEFAULT_MM_PER_PIXEL);
        assert_eq!(set.get(Landmark::S), Some(Point::new(10.0, 20.0)));
    }

    #[test]
    fn image_calibration_from_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::filled(4, 3, 7);
        save_image(&dir.path().join("case01.pgm"), &img).unwrap();
        assert_eq!(
            load_image(&dir.path().join("case01.pgm")).unwrap().mm_per_pixel(),
            DEFAULT_MM_PER_PIXEL
        );
        fs::write(dir.path().join("case01.lmk"), "# mm_per_pixel=0.25\nS\t1\t1\n").unwrap();
        let loaded = load_image(&dir.path().join("case01.pgm")).unwrap();
        assert_eq!(loaded.mm_per_pixel(), 0.25);
        assert_eq!(loaded.pixels(), img.pixels());
    }

    #[test]
    fn averaging() {
        let mut a = LandmarkSet::new(Source::Expert);
        a.insert(Landmark::Me, Point::new(10.0, 10.0)).unwrap();
        let mut b = LandmarkSet::new(Source::Expert);
        b.insert(Landmark::Me, Point::new(12.0, 14.0)).unwrap();
        let avg = average_expert_sets(&a, &b).unwrap();
        assert_eq!(avg.get(Landmark::Me), Some(Point::new(11.0, 12.0)));
        assert_eq!(average_expert_sets(&a, &a).unwrap(), a);

        let mut c = LandmarkSet::new(Source::Expert);
        c.insert(Landmark::S, Point::new(1.0, 1.0)).unwrap();
        assert!(matches!(
            average_expert_sets(&a, &c),
            Err(Error::NameMismatch)
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<String> = (0..40).map(|i| format!("case{i:02}")).collect();
        let s = split_corpus(&ids, 17).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (20, 20));
        assert_eq!(s, split_corpus(&ids, 17).unwrap());

        let two = split_corpus(&ids[..2], 3).unwrap();
        assert_eq!((two.train.len(), two.test.len()), (1, 1));

        let odd = split_corpus(&ids[..5], 3).unwrap();
        assert_eq!((odd.train.len(), odd.test.len()), (3, 2));

        assert!(matches!(
            split_corpus(&ids[..1], 0),
            Err(Error::TooFewCases(1))
        ));
    }

    #[test]
    fn split_text_round_trip() {
        let ids: Vec<String> = (0..7).map(|i| format!("c{i}")).collect();
        let s = split_corpus(&ids, 99).unwrap();
        assert_eq!(CorpusSplit::from_text(&s.to_text()).unwrap(), s);
    }

    fn arb_set() -> impl Strategy<Value = LandmarkSet> {
        proptest::collection::btree_map(
            proptest::sample::select(Landmark::ALL.to_vec()),
            (0.0f64..2000.0, 0.0f64..2000.0),
            1..16,
        )
        .prop_map(|m| {
            let mut s = LandmarkSet::new(Source::Expert);
            for (k, (x, y)) in m {
                s.insert(k, Point::new(x, y)).unwrap();
            }
            s
        })
    }

    proptest! {
        #[test]
        fn annotation_text_round_trip(set in arb_set(), mm in proptest::option::of(0.01f64..1.0)) {
            let (back, back_mm) = parse_annotations(&format_annotations(&set, mm), Source::Expert).unwrap();
            prop_assert_eq!(back, set);
            prop_assert_eq!(back_mm, mm);
        }

        #[test]
        fn mean_is_equidistant(
            ax in 0.0f64..1000.0, ay in 0.0f64..1000.0,
            bx in 0.0f64..1000.0, by in 0.0f64..1000.0,
        ) {
            let mut a = LandmarkSet::new(Source::Expert);
            a.insert(Landmark::N, Point::new(ax, ay)).unwrap();
            let mut b = LandmarkSet::new(Source::Expert);
            b.insert(Landmark::N, Point::new(bx, by)).unwrap();
            let m = average_expert_sets(&a, &b).unwrap().get(Landmark::N).unwrap();
            let da = m.distance(&Point::new(ax, ay));
            let db = m.distance(&Point::new(bx, by));
            prop_assert!((da - db).abs() <= 1e-9 * (1.0 + da));
        }

        #[test]
        fn split_is_a_permutation(n in 2usize..60, seed in any::<u64>()) {
            let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
            let s = split_corpus(&ids, seed).unwrap();
            let mut all: Vec<String> = s.train.iter().chain(s.test.iter()).cloned().collect();
            all.sort();
            let mut expected = ids.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
            prop_assert!(s.train.iter().all(|t| !s.test.contains(t)));
            prop_assert!(s.train.len() >= s.test.len() && s.train.len() - s.test.len() <= 1);
        }
    }
}
