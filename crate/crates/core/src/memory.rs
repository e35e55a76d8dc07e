//! Prototype memory of normal-node embeddings.

use gthna_autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// `m` prototype items, one per row. Items are plain state: they never
/// receive gradients and change only through [`MemoryBank::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    items: Tensor,
}

fn normalize(row: &mut [f64]) -> bool {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        row.iter_mut().for_each(|v| *v /= norm);
        true
    } else {
        false
    }
}

fn unit_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for i in 0..out.rows() {
        normalize(out.row_mut(i));
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl MemoryBank {
    /// Items drawn uniformly on the unit sphere.
    pub fn random(m: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        if m == 0 || width == 0 {
            return Err(Error::Config(format!("memory bank needs m ≥ 1 and width ≥ 1, got {m}×{width}")));
        }
        let mut items = Tensor::zeros(m, width);
        for j in 0..m {
            loop {
                let row = items.row_mut(j);
                for v in row.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                if normalize(row) {
                    break;
                }
            }
        }
        Ok(Self { items })
    }

    /// Wraps existing items as given (no normalization).
    pub fn from_items(items: Tensor) -> Result<Self> {
        if items.rows() == 0 || items.cols() == 0 {
            return Err(Error::Shape("memory bank must have at least one item".into()));
        }
        if !items.all_finite() {
            return Err(Error::Shape("memory items must be finite".into()));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &Tensor {
        &self.items
    }

    pub fn into_items(self) -> Tensor {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.items.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.items.cols()
    }

    fn check_width(&self, h: &Tensor) -> Result<()> {
        if h.cols() != self.width() {
            return Err(Error::Shape(format!(
                "queries have width {}, memory items have width {}",
                h.cols(),
                self.width()
            )));
        }
        Ok(())
    }

    /// Softmax-weighted retrieval by cosine similarity.
    pub fn read(&self, tape: &mut Tape, h_a: Var) -> Result<MemoryReadout> {
        self.check_width(tape.value(h_a))?;
        let unit_items = tape.constant(unit_rows(&self.items).transpose());
        let raw_items = tape.constant(self.items.clone());
        let q = tape.l2_normalize_rows(h_a);
        let sim = tape.matmul(q, unit_items)?;
        let s_q = tape.row_softmax(sim);
        let h_hat = tape.matmul(s_q, raw_items)?;
        let h_bar = tape.concat(&[h_a, h_hat])?;
        Ok(MemoryReadout { s_q, h_hat, h_bar })
    }

    /// Writes the pseudo-normal queries `h_a[u_h]` into every item.
    ///
    /// Each item receives a softmax-weighted sum of the queries (softmax over
    /// the selected nodes, per item) and is then renormalized.
    pub fn update(&mut self, h_a: &Tensor, u_h: &[usize]) -> Result<()> {
        self.check_width(h_a)?;
        if u_h.is_empty() {
            return Err(Error::Config("memory update needs at least one pseudo-normal node".into()));
        }
        if let Some(&bad) = u_h.iter().find(|&&i| i >= h_a.rows()) {
            return Err(Error::Shape(format!("pseudo-normal node {bad} out of range for {} rows", h_a.rows())));
        }
        let queries = h_a.select_rows(u_h);
        let sim = unit_rows(&queries).matmul(&unit_rows(&self.items).transpose())?;
        let mut next = self.items.clone();
        let mut weights = vec![0.0; u_h.len()];
        for j in 0..self.len() {
            let max = (0..u_h.len()).map(|i| sim.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (i, w) in weights.iter_mut().enumerate() {
                *w = (sim.get(i, j) - max).exp();
                total += *w;
            }
            let row = next.row_mut(j);
            for (i, w) in weights.iter().enumerate() {
                let w = w / total;
                for (r, q) in row.iter_mut().zip(queries.row(i)) {
                    *r += w * q;
                }
            }
            if !normalize(row) {
                row.copy_from_slice(self.items.row(j));
            }
        }
        self.items = next;
        Ok(())
    }

    /// Per-query `max_j cosine(h_i, M_j)`; zero-norm queries score 0.
    pub fn max_cosine(&self, h_a: &Tensor) -> Result<Vec<f64>> {
        self.check_width(h_a)?;
        let sim = unit_rows(h_a).matmul(&unit_rows(&self.items).transpose())?;
        Ok((0..sim.rows())
            .map(|i| sim.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    /// Nearest and second-nearest item per query by squared distance;
    /// ties go to the lower item index.
    pub fn nearest_two(&self, h_a: &Tensor) -> Result<Vec<(usize, Option<usize>)>> {
        self.check_width(h_a)?;
        Ok((0..h_a.rows())
            .map(|i| {
                let q = h_a.row(i);
                let mut order: Vec<(f64, usize)> = (0..self.len()).map(|j| (sq_dist(q, self.items.row(j)), j)).collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                (order[0].1, order.get(1).map(|x| x.1))
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MemoryReadout {
    /// `n × m` read weights; rows sum to 1.
    pub s_q: Var,
    pub h_hat: Var,
    /// `[h_a ∥ h_hat]`.
    pub h_bar: Var,
}

/// The `⌊ratio·n⌋` nodes with the smallest errors (at least one), ties broken
/// by ascending id. The result is sorted by id.
pub fn select_pseudo_normal(errors: &[f64], ratio: f64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("pseudo-normal ratio must lie in (0, 1], got {ratio}")));
    }
    let n = errors.len();
    let take = ((ratio * n as f64).floor() as usize).clamp(1.min(n), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]).then(a.cmp(&b)));
    let mut chosen = order[..take].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Compactness and separateness terms, each `n × 1`.
#[derive(Debug, Clone, Copy)]
pub struct MemoryLosses {
    pub l_m: Var,
    pub l_p: Var,
}

/// `l_m = ‖h − M_f‖²`, `l_p = max(0, ‖h − M_f‖² − ‖h − M_s‖² + β)`.
/// Item choice happens off the tape, so only `h_a` receives gradients.
pub fn memory_losses(tape: &mut Tape, h_a: Var, bank: &MemoryBank, beta: f64) -> Result<MemoryLosses> {
    let h = tape.value(h_a).clone();
    let nearest = bank.nearest_two(&h)?;
    let first: Vec<usize> = nearest.iter().map(|x| x.0).collect();
    let m_f = tape.constant(bank.items().select_rows(&first));
    let diff = tape.sub(h_a, m_f)?;
    let sq = tape.square(diff);
    let l_m = tape.sum_rows(sq);

    if bank.len() < 2 {
        log::warn!("memory bank has a single item; separateness loss is zero");
        let l_p = tape.constant(Tensor::zeros(h.rows(), 1));
        return Ok(MemoryLosses { l_m, l_p });
    }
    let second: Vec<usize> = nearest.iter().map(|x| x.1.expect("m ≥ 2")).collect();
    let m_s = tape.constant(bank.items().select_rows(&second));
    let diff_s = tape.sub(h_a, m_s)?;
    let sq_s = tape.square(diff_s);
    let d_s = tape.sum_rows(sq_s);
    let gap = tape.sub(l_m, d_s)?;
    let gap = tape.add_scalar(gap, beta);
    let l_p = tape.relu(gap);
    Ok(MemoryLosses { l_m, l_p })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn read_values(bank: &MemoryBank, h: &Tensor) -> (Tensor, Tensor, Tensor) {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let r = bank.read(&mut tape, hv).unwrap();
        (tape.value(r.s_q).clone(), tape.value(r.h_hat).clone(), tape.value(r.h_bar).clone())
    }

    #[test]
    fn single_item_reads_itself() {
        let bank = MemoryBank::from_items(Tensor::from_rows(&[vec![0.6, 0.8]]).unwrap()).unwrap();
        let (s, h_hat, _) = read_values(&bank, &random(3, 2, 0));
        assert!(s.data().iter().all(|&v| v == 1.0));
        for i in 0..3 {
            assert_eq!(h_hat.row(i), &[0.6, 0.8]);
        }
    }

    #[test]
    fn matching_item_dominates() {
        let items = Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let bank = MemoryBank::from_items(items).unwrap();
        let (s, _, _) = read_values(&bank, &Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap());
        let argmax = (0..3).max_by(|&a, &b| s.get(0, a).total_cmp(&s.get(0, b))).unwrap();
        assert_eq!(argmax, 2);
    }

    #[test]
    fn zero_query_reads_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bank = MemoryBank::random(5, 3, &mut rng).unwrap();
        let (s, _, _) = read_values(&bank, &Tensor::zeros(1, 3));
        assert!(s.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn read_matches_loop_oracle() {
        let h = random(4, 8, 1);
        let items = random(6, 8, 2);
        let bank = MemoryBank::from_items(items.clone()).unwrap();
        let (s, h_hat, h_bar) = read_values(&bank, &h);
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..4 {
            let cos: Vec<f64> = (0..6)
                .map(|j| {
                    let dot: f64 = (0..8).map(|c| h.get(i, c) * items.get(j, c)).sum();
                    dot / (norm(h.row(i)) * norm(items.row(j)))
                })
                .collect();
            let z: f64 = cos.iter().map(|c| c.exp()).sum();
            for j in 0..6 {
                assert!((s.get(i, j) - cos[j].exp() / z).abs() < 1e-12);
            }
            for c in 0..8 {
                let want: f64 = (0..6).map(|j| cos[j].exp() / z * items.get(j, c)).sum();
                assert!((h_hat.get(i, c) - want).abs() < 1e-12);
                assert_eq!(h_bar.get(i, c), h.get(i, c));
                assert_eq!(h_bar.get(i, 8 + c), h_hat.get(i, c));
            }
        }
    }

    #[test]
    fn pseudo_normal_examples() {
        assert_eq!(select_pseudo_normal(&[3.0, 1.0, 2.0, 10.0], 0.5).unwrap(), vec![1, 2]);
        assert_eq!(select_pseudo_normal(&[3.0, 1.0, 2.0, 10.0], 1.0).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(select_pseudo_normal(&[1.0; 4], 0.5).unwrap(), vec![0, 1]);
        assert_eq!(select_pseudo_normal(&[5.0, 4.0], 0.1).unwrap(), vec![1]);
        assert!(select_pseudo_normal(&[1.0], 0.0).is_err());
        assert!(select_pseudo_normal(&[1.0], 1.5).is_err());
    }

    #[test]
    fn single_query_update_adds_it_to_every_item() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut bank = MemoryBank::random(4, 3, &mut rng).unwrap();
        let before = bank.items().clone();
        let h = Tensor::from_rows(&[vec![9.0, 9.0, 9.0], vec![0.3, -0.2, 0.5]]).unwrap();
        bank.update(&h, &[1]).unwrap();
        for j in 0..4 {
            let mut want: Vec<f64> = before.row(j).iter().zip(h.row(1)).map(|(m, q)| m + q).collect();
            normalize(&mut want);
            for c in 0..3 {
                assert!((bank.items().get(j, c) - want[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_by_two_update_by_hand() {
        // Items e1, e2; queries q1 = (1,0), q2 = (1,1)/√2·2.
        // cos(q1,e1)=1, cos(q2,e1)=1/√2; cos(q1,e2)=0, cos(q2,e2)=1/√2.
        let items = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = std::f64::consts::SQRT_2;
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![r, r]]).unwrap();
        let mut bank = MemoryBank::from_items(items).unwrap();
        bank.update(&h, &[0, 1]).unwrap();

        let c = 1.0 / r;
        let w11 = 1f64.exp() / (1f64.exp() + c.exp());
        let w12 = 1.0 - w11;
        let w21 = 1.0 / (1.0 + c.exp());
        let w22 = 1.0 - w21;
        let m1 = [1.0 + w11 + w12 * r, w12 * r];
        let m2 = [w21 + w22 * r, 1.0 + w22 * r];
        for (j, m) in [m1, m2].iter().enumerate() {
            let norm = (m[0] * m[0] + m[1] * m[1]).sqrt();
            assert!((bank.items().get(j, 0) - m[0] / norm).abs() < 1e-12);
            assert!((bank.items().get(j, 1) - m[1] / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_match_with_far_second_item_has_zero_losses() {
        let items = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let bank = MemoryBank::from_items(items).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let l = memory_losses(&mut tape, h, &bank, 0.5).unwrap();
        assert_eq!(tape.value(l.l_m).item().unwrap(), 0.0);
        assert_eq!(tape.value(l.l_p).item().unwrap(), 0.0);
    }

    #[test]
    fn equidistant_items_give_margin() {
        let items = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let bank = MemoryBank::from_items(items).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![0.3, 0.3]]).unwrap());
        let l = memory_losses(&mut tape, h, &bank, 0.5).unwrap();
        assert!((tape.value(l.l_p).item().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_items_by_hand() {
        let items = random(3, 4, 21);
        let q = random(1, 4, 22);
        let bank = MemoryBank::from_items(items.clone()).unwrap();
        let mut d: Vec<f64> = (0..3).map(|j| sq_dist(q.row(0), items.row(j))).collect();
        d.sort_by(f64::total_cmp);
        let mut tape = Tape::new();
        let h = tape.constant(q);
        let l = memory_losses(&mut tape, h, &bank, 0.5).unwrap();
        assert!((tape.value(l.l_m).item().unwrap() - d[0]).abs() < 1e-12);
        assert!((tape.value(l.l_p).item().unwrap() - (d[0] - d[1] + 0.5).max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn single_item_has_no_separateness() {
        let bank = MemoryBank::from_items(Tensor::ones(1, 2)).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(random(3, 2, 5));
        let l = memory_losses(&mut tape, h, &bank, 0.5).unwrap();
        assert_eq!(tape.value(l.l_p), &Tensor::zeros(3, 1));
    }

    #[test]
    fn losses_reach_queries_but_not_items() {
        let bank = MemoryBank::from_items(random(3, 4, 8)).unwrap();
        let snapshot = bank.clone();
        let mut tape = Tape::new();
        let h = tape.leaf(random(2, 4, 9));
        let l = memory_losses(&mut tape, h, &bank, 0.5).unwrap();
        let both = tape.add(l.l_m, l.l_p).unwrap();
        let total = tape.sum(both);
        tape.backward(total).unwrap();
        assert!(tape.grad(h).is_some());
        assert_eq!(bank, snapshot);
    }

    #[test]
    fn max_cosine_of_an_item_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bank = MemoryBank::random(5, 4, &mut rng).unwrap();
        let h = bank.items().select_rows(&[2]);
        assert!((bank.max_cosine(&h).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn update_keeps_rows_unit_and_columns_normalized(seed in 0u64..1000, n in 1usize..8, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bank = MemoryBank::random(m, 5, &mut rng).unwrap();
            let h = random(n, 5, seed + 1);
            let u: Vec<usize> = (0..n).collect();
            bank.update(&h, &u).unwrap();
            for j in 0..m {
                let norm: f64 = bank.items().row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-8);
            }
            let again = unit_rows(bank.items());
            prop_assert!(again.max_abs_diff(bank.items()) < 1e-15);
        }

        #[test]
        fn read_rows_sum_to_one(seed in 0u64..1000, n in 1usize..6, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bank = MemoryBank::random(m, 4, &mut rng).unwrap();
            let (s, _, _) = read_values(&bank, &random(n, 4, seed));
            for i in 0..n {
                prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn single_node_update_attracts_items(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bank = MemoryBank::random(6, 4, &mut rng).unwrap();
            let h = random(1, 4, seed ^ 0xabc);
            let before = bank.clone();
            bank.update(&h, &[0]).unwrap();
            let cos = |b: &MemoryBank| unit_rows(b.items()).matmul(&unit_rows(&h).transpose()).unwrap();
            let (c0, c1) = (cos(&before), cos(&bank));
            for j in 0..6 {
                prop_assert!(c1.get(j, 0) >= c0.get(j, 0) - 1e-12);
            }
        }
    }
}
