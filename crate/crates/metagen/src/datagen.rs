//! Dataset synthesis: three-branch conditional radius sampling, densities,
//! arm lengths, and the balancing mass solved from the equilibrium equation.
//!
//! Every record satisfies the contact constraint exactly (`r_int1 == r_ext2`
//! by assignment), keeps both wall thicknesses at least [`THICKNESS`], and
//! carries the mass that balances it, so the contact and performance errors
//! of a dataset record are zero by construction.
//!
//! Generation is single-threaded per seed; the RNG draw order is part of the
//! determinism contract (same seed, same config, byte-identical file).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Condition, SystemParams, THICKNESS, equilibrium_mass};
use crate::util::derive_seed;

/// On-disk schema version of the JSON Lines dataset format.
pub const SCHEMA_VERSION: u32 = 1;

/// Relative tolerance for re-checking the stored mass against the
/// equilibrium equation on load.
pub const MASS_CONSISTENCY_RTOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("dataset file {0} is empty (missing header line)")]
    Empty(String),
}

/// Which radius was drawn first; the other two follow conditionally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `r_ext1` first, then `r_int1 = r_ext2`, then `r_int2`.
    ExtFirst,
    /// `r_int1 = r_ext2` first, then `r_ext1` and `r_int2`.
    ContactFirst,
    /// `r_int2` first, then `r_int1 = r_ext2`, then `r_ext1`.
    IntFirst,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::ExtFirst, Branch::ContactFirst, Branch::IntFirst];
}

/// One dataset row: system scalars, the condition it balances, and the
/// sampling branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub params: SystemParams,
    pub cond: Condition,
    pub branch: Branch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_records: usize,
    pub seed: u64,
    pub n_points: usize,
    /// Shuffle the block-ordered branches before writing.
    pub shuffle: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_records: 20_000, seed: 0, n_points: 30, shuffle: true }
    }
}

/// Header line of the JSON Lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub n_records: usize,
    pub n_points: usize,
}

/// A loaded or freshly built dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

/// Non-fatal findings from [`load_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadWarning {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub warnings: Vec<LoadWarning>,
}

// Serialized row layout: flat scalars, one record per line.
#[derive(Serialize, Deserialize)]
struct RecordRow {
    r_ext1: f64,
    r_int1: f64,
    r_ext2: f64,
    r_int2: f64,
    d1: f64,
    d2: f64,
    x: f64,
    y: f64,
    m_cube: f64,
    branch: Branch,
}

impl From<&DatasetRecord> for RecordRow {
    fn from(r: &DatasetRecord) -> Self {
        RecordRow {
            r_ext1: r.params.r_ext1,
            r_int1: r.params.r_int1,
            r_ext2: r.params.r_ext2,
            r_int2: r.params.r_int2,
            d1: r.params.d1,
            d2: r.params.d2,
            x: r.cond.x,
            y: r.cond.y,
            m_cube: r.cond.m_cube,
            branch: r.branch,
        }
    }
}

impl From<RecordRow> for DatasetRecord {
    fn from(r: RecordRow) -> Self {
        DatasetRecord {
            params: SystemParams::new(r.r_ext1, r.r_int1, r.r_ext2, r.r_int2, r.d1, r.d2),
            cond: Condition::new(r.x, r.y, r.m_cube),
            branch: r.branch,
        }
    }
}

/// Draws the four radii for one record. The contact constraint holds exactly
/// because `r_int1` and `r_ext2` are one assignment, and both walls keep a
/// margin of at least [`THICKNESS`] by range construction.
pub fn sample_radii(branch: Branch, rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    let t = THICKNESS;
    match branch {
        Branch::ExtFirst => {
            let r_ext1 = rng.random_range(25.0..100.0);
            let r_ext2 = rng.random_range(15.0..r_ext1 - t);
            let r_int2 = rng.random_range(10.0..r_ext2 - t);
            (r_ext1, r_ext2, r_ext2, r_int2)
        }
        Branch::ContactFirst => {
            let r_ext2 = rng.random_range(15.0..95.0);
            let r_ext1 = rng.random_range(r_ext2 + t..100.0);
            let r_int2 = rng.random_range(10.0..r_ext2 - t);
            (r_ext1, r_ext2, r_ext2, r_int2)
        }
        Branch::IntFirst => {
            let r_int2 = rng.random_range(10.0..90.0);
            let r_ext2 = rng.random_range(r_int2 + t..95.0);
            let r_ext1 = rng.random_range(r_ext2 + t..100.0);
            (r_ext1, r_ext2, r_ext2, r_int2)
        }
    }
}

/// Draws one full record: radii per `branch`, densities uniform on `[1, 12]`,
/// `x` uniform on `[1, 99]` with `y = 100 - x`, and the mass solved from the
/// equilibrium equation.
pub fn sample_record(branch: Branch, rng: &mut ChaCha8Rng) -> DatasetRecord {
    let (r_ext1, r_int1, r_ext2, r_int2) = sample_radii(branch, rng);
    let d1 = rng.random_range(1.0..12.0);
    let d2 = rng.random_range(1.0..12.0);
    let x = rng.random_range(1.0..99.0);
    let y = crate::domain::ARM_TOTAL - x;
    let params = SystemParams::new(r_ext1, r_int1, r_ext2, r_int2, d1, d2);
    let m_cube = equilibrium_mass(&params, x, y)
        .expect("sampled radii are ordered and x, y positive by construction");
    DatasetRecord { params, cond: Condition::new(x, y, m_cube), branch }
}

/// Builds `cfg.n_records` records split into equal branch thirds (remainder
/// assigned round-robin by branch index), block-ordered then optionally
/// shuffled with a seed derived from `cfg.seed`. Bit-identical across runs
/// for a fixed config.
pub fn build_dataset(cfg: &DatasetConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = cfg.n_records / 3;
    let rem = cfg.n_records % 3;
    let mut records = Vec::with_capacity(cfg.n_records);
    for (i, branch) in Branch::ALL.into_iter().enumerate() {
        let count = base + if i < rem { 1 } else { 0 };
        for _ in 0..count {
            records.push(sample_record(branch, &mut rng));
        }
    }
    if cfg.shuffle {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
        records.shuffle(&mut shuffle_rng);
    }
    Dataset {
        header: DatasetHeader {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            n_records: cfg.n_records,
            n_points: cfg.n_points,
        },
        records,
    }
}

/// Writes the dataset as JSON Lines: a header line, then one record per
/// line. Point clouds are not stored; they re-render deterministically.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DatagenError> {
    let io_err = |source| DatagenError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut write_line = |json: String| -> Result<(), DatagenError> {
        w.write_all(json.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|source| DatagenError::Io { path: path.display().to_string(), source })
    };
    write_line(serde_json::to_string(&ds.header).expect("header serializes"))?;
    for r in &ds.records {
        write_line(serde_json::to_string(&RecordRow::from(r)).expect("record serializes"))?;
    }
    w.flush().map_err(|source| DatagenError::Io { path: path.display().to_string(), source })
}

/// Reads a dataset back and re-validates each row: the stored mass is checked
/// against the equilibrium equation; inconsistencies become [`LoadWarning`]s
/// rather than errors, since scoring slightly corrupted data is still useful.
pub fn load_dataset(path: &Path) -> Result<LoadOutcome, DatagenError> {
    let file = File::open(path).map_err(|source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines.next().ok_or_else(|| DatagenError::Empty(path.display().to_string()))?;
    let first = first.map_err(|source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let header: DatasetHeader = serde_json::from_str(&first)
        .map_err(|e| DatagenError::Parse { line: 1, msg: e.to_string() })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(DatagenError::SchemaVersion {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }

    let mut records = Vec::with_capacity(header.n_records);
    let mut warnings = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1; // 1-based, including the header line
        let line = line.map_err(|source| DatagenError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RecordRow = serde_json::from_str(&line)
            .map_err(|e| DatagenError::Parse { line: line_no, msg: e.to_string() })?;
        let rec = DatasetRecord::from(row);
        match equilibrium_mass(&rec.params, rec.cond.x, rec.cond.y) {
            Ok(expected) => {
                let denom = expected.abs().max(1e-12);
                if ((rec.cond.m_cube - expected) / denom).abs() > MASS_CONSISTENCY_RTOL {
                    warnings.push(LoadWarning {
                        line: line_no,
                        msg: format!(
                            "m_cube {} inconsistent with equilibrium mass {expected}",
                            rec.cond.m_cube
                        ),
                    });
                }
            }
            Err(e) => warnings.push(LoadWarning {
                line: line_no,
                msg: format!("record not evaluable: {e}"),
            }),
        }
        records.push(rec);
    }
    if records.len() != header.n_records {
        warnings.push(LoadWarning {
            line: 1,
            msg: format!(
                "header announces {} records, file contains {}",
                header.n_records,
                records.len()
            ),
        });
    }
    Ok(LoadOutcome { dataset: Dataset { header, records }, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{contact_error, performance_error};

    fn tmp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("metagen-datagen-{name}-{}", std::process::id()));
        p
    }

    fn assert_record_invariants(r: &DatasetRecord) {
        let p = &r.params;
        assert_eq!(p.r_int1, p.r_ext2, "contact is an assignment, not a sample");
        assert!(p.r_ext1 - p.r_int1 >= THICKNESS);
        assert!(p.r_ext2 - p.r_int2 >= THICKNESS);
        assert!(p.r_int2 >= 10.0 && p.r_ext2 < 95.0 && p.r_ext1 < 100.0);
        assert!((1.0..12.0).contains(&p.d1) && (1.0..12.0).contains(&p.d2));
        assert!((1.0..99.0).contains(&r.cond.x));
        assert_eq!(r.cond.x + r.cond.y, 100.0);
        assert_eq!(contact_error(p), 0.0);
        let ep = performance_error(p, &r.cond);
        let scale = (r.cond.m_cube * r.cond.x).abs().max(1e-12);
        assert!((ep / scale).abs() < 1e-6, "relative performance error {}", ep / scale);
    }

    #[test]
    fn sample_radii_respects_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for branch in Branch::ALL {
            for _ in 0..2000 {
                let (r_ext1, r_int1, r_ext2, r_int2) = sample_radii(branch, &mut rng);
                assert_eq!(r_int1, r_ext2);
                assert!(10.0 <= r_int2 && r_int2 < r_ext2 && r_ext2 < 95.0 && r_ext1 < 100.0);
                assert!(r_ext2 - r_int2 >= THICKNESS && r_ext1 - r_int1 >= THICKNESS);
            }
        }
    }

    #[test]
    fn sample_radii_first_draw_covers_its_range() {
        // Monte-Carlo range oracle: the first-sampled radius of each branch
        // is uniform on its stated range, so its empirical min/max land
        // within 0.5 of the endpoints at 1e5 draws. The conditional radii
        // have data-dependent ranges; only their hard bounds are asserted
        // (see sample_radii_respects_ranges).
        let n = 100_000;
        let cases: [(Branch, fn(&(f64, f64, f64, f64)) -> f64, f64, f64); 3] = [
            (Branch::ExtFirst, |r| r.0, 25.0, 100.0),
            (Branch::ContactFirst, |r| r.2, 15.0, 95.0),
            (Branch::IntFirst, |r| r.3, 10.0, 90.0),
        ];
        for (branch, pick, lo, hi) in cases {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for _ in 0..n {
                let v = pick(&sample_radii(branch, &mut rng));
                min = min.min(v);
                max = max.max(v);
            }
            assert!(min - lo < 0.5, "{branch:?}: min {min} too far from {lo}");
            assert!(hi - max < 0.5, "{branch:?}: max {max} too far from {hi}");
        }
    }

    #[test]
    fn sample_radii_first_draw_is_uniform() {
        // Kolmogorov-Smirnov statistic of the first-sampled radius against
        // its uniform law, 1e5 draws.
        let n = 100_000;
        let cases: [(Branch, fn(&(f64, f64, f64, f64)) -> f64, f64, f64); 3] = [
            (Branch::ExtFirst, |r| r.0, 25.0, 100.0),
            (Branch::ContactFirst, |r| r.2, 15.0, 95.0),
            (Branch::IntFirst, |r| r.3, 10.0, 90.0),
        ];
        for (branch, pick, lo, hi) in cases {
            let mut rng = ChaCha8Rng::seed_from_u64(29);
            let mut us: Vec<f64> =
                (0..n).map(|_| (pick(&sample_radii(branch, &mut rng)) - lo) / (hi - lo)).collect();
            us.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ks: f64 = 0.0;
            for (i, u) in us.iter().enumerate() {
                ks = ks.max((((i + 1) as f64) / n as f64 - u).abs());
                ks = ks.max((u - i as f64 / n as f64).abs());
            }
            assert!(ks < 0.02, "{branch:?}: KS statistic {ks}");
        }
    }

    #[test]
    fn sample_record_invariants_and_density_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut dsum = 0.0;
        for i in 0..n {
            let r = sample_record(Branch::ALL[i % 3], &mut rng);
            assert_record_invariants(&r);
            dsum += r.params.d1 + r.params.d2;
        }
        let mean = dsum / (2.0 * n as f64);
        assert!((mean - 6.5).abs() < 0.05, "density mean {mean}");
    }

    #[test]
    fn build_dataset_branch_counts_and_determinism() {
        let cfg = DatasetConfig { n_records: 20_000, seed: 0, ..Default::default() };
        let ds = build_dataset(&cfg);
        assert_eq!(ds.records.len(), 20_000);
        let count = |b: Branch| ds.records.iter().filter(|r| r.branch == b).count();
        assert_eq!(count(Branch::ExtFirst), 6_667);
        assert_eq!(count(Branch::ContactFirst), 6_667);
        assert_eq!(count(Branch::IntFirst), 6_666);

        let again = build_dataset(&cfg);
        assert_eq!(ds, again);

        let p1 = tmp_path("det-a.jsonl");
        let p2 = tmp_path("det-b.jsonl");
        save_dataset(&ds, &p1).unwrap();
        save_dataset(&again, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_file(&p1).unwrap();
        std::fs::remove_file(&p2).unwrap();
    }

    #[test]
    fn build_dataset_all_records_valid() {
        let cfg = DatasetConfig { n_records: 5_000, seed: 9, ..Default::default() };
        for r in &build_dataset(&cfg).records {
            assert_record_invariants(r);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let cfg = DatasetConfig { n_records: 300, seed: 4, ..Default::default() };
        let ds = build_dataset(&cfg);
        let path = tmp_path("roundtrip.jsonl");
        save_dataset(&ds, &path).unwrap();
        let out = load_dataset(&path).unwrap();
        assert_eq!(out.dataset, ds);
        assert!(out.warnings.is_empty());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn load_reports_parse_error_with_line() {
        let cfg = DatasetConfig { n_records: 10, seed: 1, ..Default::default() };
        let ds = build_dataset(&cfg);
        let path = tmp_path("truncated.jsonl");
        save_dataset(&ds, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.truncate(text.len() - 30); // chop the last record mid-JSON
        std::fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(DatagenError::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn load_warns_on_inconsistent_mass() {
        let cfg = DatasetConfig { n_records: 5, seed: 2, ..Default::default() };
        let mut ds = build_dataset(&cfg);
        ds.records[2].cond.m_cube *= 1.01;
        let path = tmp_path("inconsistent.jsonl");
        save_dataset(&ds, &path).unwrap();
        let out = load_dataset(&path).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.warnings[0].line, 4); // header + records 1..3
        assert!(out.warnings[0].msg.contains("m_cube"));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn load_rejects_schema_mismatch() {
        let path = tmp_path("schema.jsonl");
        std::fs::write(&path, "{\"schema_version\":99,\"seed\":0,\"n_records\":0,\"n_points\":30}\n")
            .unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DatagenError::SchemaVersion { found: 99, .. })
        ));
        std::fs::remove_file(&path).unwrap();
    }
}
