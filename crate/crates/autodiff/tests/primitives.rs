use std::sync::Arc;

use gthna_autodiff::{
    gradient_check, BoundParams, Checkpoint, Error, GradCheckConfig, ParamRegistry, SparseMatrix, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Tape, &BoundParams, &Tensor) -> Result<Var, Error>;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
}

/// Each case reduces to a scalar with a fixed random weighting so every
/// output coordinate contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var, Error> {
    let [r, c] = tape.value(y).shape();
    let wt = Tensor::from_fn(r, c, |i, j| w.data()[(i * c + j) % w.len()]);
    let wv = tape.constant(wt);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

fn cases() -> Vec<(&'static str, Build)> {
    vec![
        ("matmul", |t, p, w| {
            let y = t.matmul(p.var("a")?, p.var("b")?)?;
            weighted_sum(t, y, w)
        }),
        ("add", |t, p, w| {
            let at = t.transpose(p.var("b")?);
            let s = t.slice_cols(at, 0, 3)?;
            let y = t.add(p.var("a")?, s)?;
            weighted_sum(t, y, w)
        }),
        ("sub", |t, p, w| {
            let at = t.transpose(p.var("b")?);
            let s = t.slice_cols(at, 0, 3)?;
            let y = t.sub(p.var("a")?, s)?;
            weighted_sum(t, y, w)
        }),
        ("multiply", |t, p, w| {
            let a = p.var("a")?;
            let y = t.mul(a, a)?;
            weighted_sum(t, y, w)
        }),
        ("divide", |t, p, w| {
            let a = p.var("a")?;
            let sq = t.square(a);
            let den = t.add_scalar(sq, 1.0);
            let y = t.div(a, den)?;
            weighted_sum(t, y, w)
        }),
        ("concat", |t, p, w| {
            let bt = t.transpose(p.var("b")?);
            let y = t.concat(&[p.var("a")?, bt])?;
            weighted_sum(t, y, w)
        }),
        ("transpose", |t, p, w| {
            let y = t.transpose(p.var("a")?);
            weighted_sum(t, y, w)
        }),
        ("row_softmax", |t, p, w| {
            let y = t.row_softmax(p.var("a")?);
            weighted_sum(t, y, w)
        }),
        ("sigmoid", |t, p, w| {
            let y = t.sigmoid(p.var("a")?);
            weighted_sum(t, y, w)
        }),
        ("relu", |t, p, w| {
            let y = t.relu(p.var("a")?);
            weighted_sum(t, y, w)
        }),
        ("exp_ln", |t, p, w| {
            let e = t.exp(p.var("a")?);
            let one = t.add_scalar(e, 1.0);
            let y = t.ln(one);
            weighted_sum(t, y, w)
        }),
        ("layer_norm", |t, p, w| {
            let y = t.layer_norm(p.var("a")?, 1e-5);
            weighted_sum(t, y, w)
        }),
        ("l2_normalize_rows", |t, p, w| {
            let y = t.l2_normalize_rows(p.var("a")?);
            weighted_sum(t, y, w)
        }),
        ("sum_square", |t, p, _| {
            let s = t.square(p.var("a")?);
            Ok(t.sum(s))
        }),
        ("mean", |t, p, _| {
            let e = t.exp(p.var("a")?);
            Ok(t.mean(e))
        }),
        ("sum_rows", |t, p, w| {
            let y = t.sum_rows(p.var("a")?);
            let sq = t.square(y);
            weighted_sum(t, sq, w)
        }),
        ("broadcasts", |t, p, w| {
            let bias = t.slice_cols(p.var("a")?, 0, 3)?;
            let row = t.transpose(p.var("col")?);
            let row = t.slice_cols(row, 0, 3)?;
            let b = t.add_row(bias, row)?;
            let b = t.mul_row(b, row)?;
            let y = t.mul_col(b, p.var("col")?)?;
            weighted_sum(t, y, w)
        }),
        ("spmm", |t, p, w| {
            let s = SparseMatrix::from_triplets(2, 4, vec![(0, 0, 0.5), (0, 3, -1.0), (1, 1, 2.0), (1, 2, 0.25)])?;
            let y = t.spmm(Arc::new(s), p.var("a")?)?;
            weighted_sum(t, y, w)
        }),
    ]
}

fn registry(seed: u64) -> (ParamRegistry, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = ParamRegistry::new();
    reg.insert("a", random(&mut rng, 4, 3)).unwrap();
    reg.insert("b", random(&mut rng, 3, 4)).unwrap();
    reg.insert("col", random(&mut rng, 4, 1)).unwrap();
    (reg, random(&mut rng, 3, 5))
}

#[test]
fn every_primitive_matches_finite_differences_over_seeds() {
    for (name, build) in cases() {
        for seed in 0..24 {
            let (reg, w) = registry(seed);
            let report = gradient_check(&reg, |t: &mut Tape, p: &BoundParams| build(t, p, &w), &GradCheckConfig::default())
                .unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
            assert!(report.within(1e-4), "{name} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn small_affine_relu_network_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, 5, 4);
    let mut reg = ParamRegistry::new();
    reg.insert_uniform("w1", 4, 6, &mut rng).unwrap();
    reg.insert("b1", random(&mut rng, 1, 6)).unwrap();
    reg.insert_uniform("w2", 6, 2, &mut rng).unwrap();
    let report = gradient_check(
        &reg,
        |t: &mut Tape, p: &BoundParams| -> Result<Var, Error> {
            let xv = t.constant(x.clone());
            let h = t.matmul(xv, p.var("w1")?)?;
            let h = t.add_row(h, p.var("b1")?)?;
            let h = t.relu(h);
            let o = t.matmul(h, p.var("w2")?)?;
            Ok(t.mean(o))
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.within(1e-4), "{report:?}");
}

proptest! {
    #[test]
    fn l2_rows_have_unit_norm(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, rows, cols));
        let y = tape.l2_normalize_rows(x);
        for r in 0..rows {
            let n: f64 = tape.value(y).row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        values in proptest::collection::vec(any::<f64>(), 1..40),
        name in "[a-z][a-z0-9_.]{0,12}",
    ) {
        let t = Tensor::new(1, values.len(), values.clone()).unwrap();
        let mut ckpt = Checkpoint::default();
        ckpt.push_meta("k", "v");
        ckpt.tensors.push((name.clone(), t));
        let back = Checkpoint::decode(&ckpt.encode()).unwrap();
        let got = back.tensor(&name).unwrap();
        for (a, b) in got.data().iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (reg, _) = registry(5);
    let path = dir.path().join("params.ckpt");
    Checkpoint::from_registry(&reg).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap().to_registry(&[]).unwrap();
    assert_eq!(back, reg);
}
