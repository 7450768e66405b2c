//! Finite-difference verification of every tape op.
//!
//! Each op is wrapped into a scalar loss, its analytic gradients are
//! compared against central differences (`h = 1e-4`) on freshly rebuilt
//! tapes. Inputs for kinked ops (ReLU, clamp) are sampled away from their
//! kinks so the differences are well defined. Used by both the unit tests
//! and the acceptance suite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NodeId, Shape, Tape};

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

/// Worst relative error seen for one op across all instances.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub elements: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub ops: Vec<OpReport>,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.ops.iter().all(|o| o.max_rel_err <= REL_TOL)
    }

    pub fn worst(&self) -> f64 {
        self.ops.iter().map(|o| o.max_rel_err).fold(0.0, f64::max)
    }
}

type Builder<'a> = &'a dyn Fn(&mut Tape, &[NodeId]) -> NodeId;

/// Compares analytic gradients of `build`'s scalar output against central
/// differences over every element of every input. Returns the worst
/// relative error (with an absolute floor so near-zero gradients compare
/// sanely).
fn check_instance(inputs: &[(Vec<f64>, Shape)], build: Builder) -> (f64, usize) {
    let run = |datas: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> =
            datas.iter().zip(inputs.iter()).map(|(d, (_, s))| tape.param(d, *s)).collect();
        let loss = build(&mut tape, &ids);
        tape.value_scalar(loss)
    };

    // analytic pass
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|(d, s)| tape.param(d, *s)).collect();
    let loss = build(&mut tape, &ids);
    tape.backward(loss).expect("scalar loss");
    let analytic: Vec<Vec<f64>> =
        ids.iter().map(|&id| tape.grad(id).expect("param grad").to_vec()).collect();

    let mut datas: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for i in 0..datas.len() {
        for j in 0..datas[i].len() {
            let orig = datas[i][j];
            datas[i][j] = orig + STEP;
            let up = run(&datas);
            datas[i][j] = orig - STEP;
            let down = run(&datas);
            datas[i][j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let denom = analytic[i][j].abs().max(numeric.abs()).max(ABS_FLOOR);
            max_rel = max_rel.max((analytic[i][j] - numeric).abs() / denom);
            checked += 1;
        }
    }
    (max_rel, checked)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Like [`rand_vec`] but resamples values closer than `margin` to any kink
/// in `kinks`, so central differences never straddle one.
fn rand_vec_away_from(
    rng: &mut ChaCha8Rng,
    n: usize,
    lo: f64,
    hi: f64,
    kinks: &[f64],
    margin: f64,
) -> Vec<f64> {
    (0..n)
        .map(|_| {
            loop {
                let v = rng.random_range(lo..hi);
                if kinks.iter().all(|k| (v - k).abs() > margin) {
                    return v;
                }
            }
        })
        .collect()
}

fn small_shape(rng: &mut ChaCha8Rng) -> Shape {
    Shape::new(rng.random_range(1..4), rng.random_range(1..6))
}

/// Runs `instances` random gradient checks per op. All ops reduce to a
/// scalar through `mse` against a constant, which is itself checked
/// directly.
pub fn run_full_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops: Vec<OpReport> = Vec::new();
    let margin = 50.0 * STEP;

    let mut record = |name: &'static str, worst: f64, count: usize, instances: usize| {
        ops.push(OpReport { op: name, instances, elements: count, max_rel_err: worst });
    };

    // affine: checks dW, db, dX at once
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let batch = rng.random_range(1..4);
        let in_dim = rng.random_range(1..5);
        let out_dim = rng.random_range(1..5);
        let inputs = vec![
            (rand_vec(&mut rng, out_dim * in_dim, -1.0, 1.0), Shape::new(out_dim, in_dim)),
            (rand_vec(&mut rng, out_dim, -1.0, 1.0), Shape::new(1, out_dim)),
            (rand_vec(&mut rng, batch * in_dim, -1.0, 1.0), Shape::new(batch, in_dim)),
        ];
        let target = rand_vec(&mut rng, batch * out_dim, -1.0, 1.0);
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let y = tape.affine(ids[0], ids[1], ids[2]).unwrap();
            let t = tape.constant(&target, Shape::new(batch, out_dim));
            tape.mse(y, t).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("affine", worst, count, instances);

    // relu: inputs sampled away from the kink at zero
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let s = small_shape(&mut rng);
        let inputs =
            vec![(rand_vec_away_from(&mut rng, s.len(), -1.0, 1.0, &[0.0], margin), s)];
        let target = rand_vec(&mut rng, s.len(), -1.0, 1.0);
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let y = tape.relu(ids[0]);
            let t = tape.constant(&target, s);
            tape.mse(y, t).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("relu", worst, count, instances);

    // concat of three pieces
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let rows = rng.random_range(1..4);
        let cols: Vec<usize> = (0..3).map(|_| rng.random_range(1..4)).collect();
        let inputs: Vec<(Vec<f64>, Shape)> = cols
            .iter()
            .map(|&c| (rand_vec(&mut rng, rows * c, -1.0, 1.0), Shape::new(rows, c)))
            .collect();
        let total: usize = cols.iter().sum();
        let target = rand_vec(&mut rng, rows * total, -1.0, 1.0);
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let y = tape.concat(ids).unwrap();
            let t = tape.constant(&target, Shape::new(rows, total));
            tape.mse(y, t).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("concat", worst, count, instances);

    // add, with fan-out: loss uses (a + b) and a again
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let s = small_shape(&mut rng);
        let inputs = vec![
            (rand_vec(&mut rng, s.len(), -1.0, 1.0), s),
            (rand_vec(&mut rng, s.len(), -1.0, 1.0), s),
        ];
        let target = rand_vec(&mut rng, s.len(), -1.0, 1.0);
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let y = tape.add(ids[0], ids[1]).unwrap();
            let y2 = tape.add(y, ids[0]).unwrap();
            let t = tape.constant(&target, s);
            tape.mse(y2, t).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("add", worst, count, instances);

    // scale
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let s = small_shape(&mut rng);
        let factor = rng.random_range(-3.0..3.0);
        let inputs = vec![(rand_vec(&mut rng, s.len(), -1.0, 1.0), s)];
        let target = rand_vec(&mut rng, s.len(), -1.0, 1.0);
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let y = tape.scale(ids[0], factor);
            let t = tape.constant(&target, s);
            tape.mse(y, t).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("scale", worst, count, instances);

    // clamp: inputs away from both clamp edges
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let s = small_shape(&mut rng);
        let (lo, hi) = (-0.6, 0.6);
        let inputs =
            vec![(rand_vec_away_from(&mut rng, s.len(), -1.0, 1.0, &[lo, hi], margin), s)];
        let target = rand_vec(&mut rng, s.len(), -1.0, 1.0);
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let y = tape.clamp(ids[0], lo, hi);
            let t = tape.constant(&target, s);
            tape.mse(y, t).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("clamp", worst, count, instances);

    // slice_cols, with the complement slice folded in so every column of
    // the input receives gradient
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let rows = rng.random_range(1..4);
        let cols = rng.random_range(2..7);
        let cut = rng.random_range(1..cols);
        let inputs = vec![(rand_vec(&mut rng, rows * cols, -1.0, 1.0), Shape::new(rows, cols))];
        let t_left = rand_vec(&mut rng, rows * cut, -1.0, 1.0);
        let t_right = rand_vec(&mut rng, rows * (cols - cut), -1.0, 1.0);
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let left = tape.slice_cols(ids[0], 0, cut).unwrap();
            let right = tape.slice_cols(ids[0], cut, cols).unwrap();
            let tl = tape.constant(&t_left, Shape::new(rows, cut));
            let tr = tape.constant(&t_right, Shape::new(rows, cols - cut));
            let ll = tape.mse(left, tl).unwrap();
            let lr = tape.mse(right, tr).unwrap();
            tape.add(ll, lr).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("slice_cols", worst, count, instances);

    // mse: both prediction and target differentiable
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let s = small_shape(&mut rng);
        let inputs = vec![
            (rand_vec(&mut rng, s.len(), -1.0, 1.0), s),
            (rand_vec(&mut rng, s.len(), -1.0, 1.0), s),
        ];
        let (e, c) =
            check_instance(&inputs, &|tape, ids| tape.mse(ids[0], ids[1]).unwrap());
        worst = worst.max(e);
        count += c;
    }
    record("mse", worst, count, instances);

    // gaussian_kl
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..instances {
        let s = small_shape(&mut rng);
        let inputs = vec![
            (rand_vec(&mut rng, s.len(), -2.0, 2.0), s),
            (rand_vec(&mut rng, s.len(), -2.0, 2.0), s),
        ];
        let (e, c) =
            check_instance(&inputs, &|tape, ids| tape.gaussian_kl(ids[0], ids[1]).unwrap());
        worst = worst.max(e);
        count += c;
    }
    record("gaussian_kl", worst, count, instances);

    // reparameterize: the rebuilt tapes must redraw the same noise, so each
    // build clones a fixed-seed rng
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..instances {
        let s = small_shape(&mut rng);
        let inputs = vec![
            (rand_vec(&mut rng, s.len(), -2.0, 2.0), s),
            (rand_vec(&mut rng, s.len(), -2.0, 2.0), s),
        ];
        let target = rand_vec(&mut rng, s.len(), -1.0, 1.0);
        let eps_rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e3779b9));
        let (e, c) = check_instance(&inputs, &|tape, ids| {
            let mut rng = eps_rng.clone();
            let z = tape.reparameterize(ids[0], ids[1], &mut rng).unwrap();
            let t = tape.constant(&target, s);
            tape.mse(z, t).unwrap()
        });
        worst = worst.max(e);
        count += c;
    }
    record("reparameterize", worst, count, instances);

    // bce against both labels
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..instances {
        let s = small_shape(&mut rng);
        let label = (k % 2) as f64;
        let inputs = vec![(rand_vec(&mut rng, s.len(), -4.0, 4.0), s)];
        let (e, c) = check_instance(&inputs, &|tape, ids| tape.bce(ids[0], label).unwrap());
        worst = worst.max(e);
        count += c;
    }
    record("bce", worst, count, instances);

    SuiteReport { ops }
}
