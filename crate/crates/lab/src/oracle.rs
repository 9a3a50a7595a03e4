//! Loss values in 128-bit binary floating point, written directly from the
//! loss definitions and sharing no code with `ecc-core`'s loss module.
//!
//! Central differences with `h = 1e-6` lose about ten significant digits to
//! cancellation, which leaves plain `f64` at roughly `1e-10` absolute
//! accuracy, not enough for a `1e-6` relative check on small entries. Here
//! the perturbed points are still the `f64` inputs shifted by exactly `±h`,
//! but the loss is evaluated with 128 bits of mantissa, so the difference
//! quotient is accurate to the limit of the finite-difference scheme itself.

use astro_float::{BigFloat, Consts, Radix, RoundingMode};
use ecc_core::gradcheck::{LossInstance, NetworkInstance};
use ecc_core::linalg::PROB_FLOOR;
use ecc_core::{CenterBank, DenseMatrix};

const PREC: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;

/// Arithmetic context. Transcendental functions need a constants cache.
pub struct Hp {
    cc: Consts,
}

type F = BigFloat;

impl Hp {
    pub fn new() -> Self {
        Self {
            cc: Consts::new().expect("constants cache"),
        }
    }

    pub fn c(&self, x: f64) -> F {
        BigFloat::from_f64(x, PREC)
    }

    fn add(&self, a: &F, b: &F) -> F {
        a.add(b, PREC, RM)
    }

    fn sub(&self, a: &F, b: &F) -> F {
        a.sub(b, PREC, RM)
    }

    fn mul(&self, a: &F, b: &F) -> F {
        a.mul(b, PREC, RM)
    }

    fn div(&self, a: &F, b: &F) -> F {
        a.div(b, PREC, RM)
    }

    fn sqrt(&self, a: &F) -> F {
        a.sqrt(PREC, RM)
    }

    fn exp(&mut self, a: &F) -> F {
        a.exp(PREC, RM, &mut self.cc)
    }

    fn ln(&mut self, a: &F) -> F {
        a.ln(PREC, RM, &mut self.cc)
    }

    fn sum<'a>(&self, it: impl IntoIterator<Item = &'a F>) -> F {
        it.into_iter().fold(self.c(0.0), |acc, v| self.add(&acc, v))
    }

    fn dot(&self, a: &[F], b: &[F]) -> F {
        a.iter()
            .zip(b)
            .fold(self.c(0.0), |acc, (x, y)| self.add(&acc, &self.mul(x, y)))
    }

    fn lift(&self, v: &[f64]) -> Vec<F> {
        v.iter().map(|&x| self.c(x)).collect()
    }

    pub fn to_f64(&mut self, a: &F) -> f64 {
        if a.is_zero() {
            return 0.0;
        }
        a.format(Radix::Dec, RM, &mut self.cc)
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(f64::NAN)
    }

    fn cos(&self, a: &[F], b: &[F]) -> F {
        let den = self.mul(&self.sqrt(&self.dot(a, a)), &self.sqrt(&self.dot(b, b)));
        self.div(&self.dot(a, b), &den)
    }

    fn log_sum_exp(&mut self, z: &[F]) -> F {
        let terms: Vec<F> = z.iter().map(|v| self.exp(v)).collect();
        let s = self.sum(&terms);
        self.ln(&s)
    }

    /// `log softmax(z)`.
    fn log_softmax(&mut self, z: &[F]) -> Vec<F> {
        let lse = self.log_sum_exp(z);
        z.iter().map(|v| self.sub(v, &lse)).collect()
    }

    /// `(f(x + h) − f(x − h)) / 2h` with the shifted points formed exactly.
    pub fn central_difference(
        &mut self,
        x: &[f64],
        h: f64,
        mut f: impl FnMut(&mut Self, &[F]) -> F,
    ) -> Vec<f64> {
        let base = self.lift(x);
        let hh = self.c(h);
        let two_h = self.c(2.0 * h);
        (0..x.len())
            .map(|i| {
                let mut probe = base.clone();
                probe[i] = self.add(&base[i], &hh);
                let up = f(self, &probe);
                probe[i] = self.sub(&base[i], &hh);
                let down = f(self, &probe);
                let q = self.div(&self.sub(&up, &down), &two_h);
                self.to_f64(&q)
            })
            .collect()
    }
}

impl Default for Hp {
    fn default() -> Self {
        Self::new()
    }
}

/// Class-center constants, recomputed from the raw bank.
pub struct Centers {
    features: Vec<Vec<F>>,
    /// Most similar other class and its cosine weight, per class.
    similar: Vec<(usize, F)>,
    /// `log max(softmax(L_y), floor)` per class.
    log_soft: Vec<Vec<F>>,
}

impl Centers {
    pub fn new(hp: &mut Hp, bank: &CenterBank) -> Self {
        let n = bank.num_classes();
        let features: Vec<Vec<F>> = (0..n).map(|c| hp.lift(bank.feature_center(c))).collect();
        let similar = (0..n)
            .map(|y| {
                let mut best: Option<(usize, F)> = None;
                for w in (0..n).filter(|&w| w != y) {
                    let s = hp.cos(&features[y], &features[w]);
                    let better = match &best {
                        None => true,
                        Some((_, b)) => s.cmp(b).is_some_and(|o| o > 0),
                    };
                    if better {
                        best = Some((w, s));
                    }
                }
                best.expect("at least two classes")
            })
            .collect();
        let floor = hp.c(PROB_FLOOR);
        let log_soft = (0..n)
            .map(|y| {
                let l = hp.lift(bank.logit_center(y));
                let ls = hp.log_softmax(&l);
                ls.iter()
                    .map(|v| {
                        let q = hp.exp(v);
                        if q.cmp(&floor).is_some_and(|o| o < 0) {
                            hp.ln(&floor)
                        } else {
                            v.clone()
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            features,
            similar,
            log_soft,
        }
    }

    pub fn most_similar(&self, y: usize) -> usize {
        self.similar[y].0
    }

    /// `1 − cos(x, F_y) + s · cos(x, F_sim)`.
    pub fn mcc_term(&self, hp: &Hp, x: &[F], y: usize) -> F {
        let (w, s) = &self.similar[y];
        let pull = hp.sub(&hp.c(1.0), &hp.cos(x, &self.features[y]));
        hp.add(&pull, &hp.mul(s, &hp.cos(x, &self.features[*w])))
    }

    /// `KL(softmax(z) ‖ Q_y) = Σ p_j (log p_j − log q_j)`.
    pub fn clg_term(&self, hp: &mut Hp, z: &[F], y: usize) -> F {
        let lp = hp.log_softmax(z);
        let mut acc = hp.c(0.0);
        for (lpj, lqj) in lp.iter().zip(&self.log_soft[y]) {
            let pj = hp.exp(lpj);
            acc = hp.add(&acc, &hp.mul(&pj, &hp.sub(lpj, lqj)));
        }
        acc
    }
}

/// `log Σ exp(z) − z_y`.
pub fn ce_term(hp: &mut Hp, z: &[F], y: usize) -> F {
    let lse = hp.log_sum_exp(z);
    hp.sub(&lse, &z[y])
}

/// Finite-difference gradients of the three loss terms with respect to the
/// perturbed input of each (features for MCC, logits for CLG and CE).
///
/// Each loss is a sum over samples, so perturbing an entry of row `k` only
/// changes sample `k`'s term; the other terms are identical on both sides of
/// the difference and are not evaluated.
pub struct LossOracle<'a> {
    hp: Hp,
    centers: Centers,
    inst: &'a LossInstance,
}

impl<'a> LossOracle<'a> {
    pub fn new(inst: &'a LossInstance) -> Self {
        let mut hp = Hp::new();
        let centers = Centers::new(&mut hp, &inst.bank);
        Self { hp, centers, inst }
    }

    pub fn centers(&self) -> &Centers {
        &self.centers
    }

    fn per_row(
        &mut self,
        input: &DenseMatrix,
        h: f64,
        mut term: impl FnMut(&mut Hp, &Centers, &[F], usize) -> F,
    ) -> Vec<f64> {
        let labels = self.inst.batch.labels();
        let mut out = Vec::with_capacity(input.rows() * input.cols());
        for (k, row) in input.iter_rows().enumerate() {
            let centers = &self.centers;
            let y = labels[k];
            out.extend(self.hp.central_difference(row, h, |hp, x| term(hp, centers, x, y)));
        }
        out
    }

    pub fn mcc(&mut self, h: f64) -> Vec<f64> {
        let features = self.inst.batch.features().clone();
        self.per_row(&features, h, |hp, c, x, y| c.mcc_term(hp, x, y))
    }

    pub fn clg(&mut self, h: f64) -> Vec<f64> {
        let logits = self.inst.batch.logits().clone();
        self.per_row(&logits, h, |hp, c, z, y| c.clg_term(hp, z, y))
    }

    pub fn ce(&mut self, h: f64) -> Vec<f64> {
        let logits = self.inst.batch.logits().clone();
        let inv_m = 1.0 / self.inst.batch.len() as f64;
        let g = self.per_row(&logits, h, |hp, _, z, y| ce_term(hp, z, y));
        // `1/M` applied after differencing; exact when M is a power of two
        // and otherwise one rounding.
        g.into_iter().map(|v| v * inv_m).collect()
    }

}

/// Finite-difference gradient of `ce + λ₁·mcc + λ₂·clg` with respect to
/// every network parameter, in `params_flat` order.
pub fn network_gradient(inst: &NetworkInstance, h: f64) -> Vec<f64> {
    let mut hp = Hp::new();
    let centers = Centers::new(&mut hp, &inst.bank);
    let dims = inst.model.layer_dims().to_vec();
    let inputs: Vec<Vec<F>> = inst.inputs.iter_rows().map(|r| hp.lift(r)).collect();
    let labels = inst.labels.clone();
    let lambda_mcc = hp.c(inst.weights.mcc);
    let lambda_clg = hp.c(inst.weights.clg);
    let inv_m = hp.div(&hp.c(1.0), &hp.c(labels.len() as f64));
    let params = inst.model.params_flat();
    hp.central_difference(&params, h, |hp, theta| {
        let mut total = hp.c(0.0);
        for (x, &y) in inputs.iter().zip(&labels) {
            let acts = forward(hp, &dims, theta, x);
            let feat = &acts[acts.len() - 2];
            let logits = &acts[acts.len() - 1];
            let ce = ce_term(hp, logits, y);
            let ce = hp.mul(&ce, &inv_m);
            let mcc = hp.mul(&lambda_mcc, &centers.mcc_term(hp, feat, y));
            let clg = centers.clg_term(hp, logits, y);
            let clg = hp.mul(&lambda_clg, &clg);
            total = hp.add(&total, &hp.add(&ce, &hp.add(&mcc, &clg)));
        }
        total
    })
}

/// Affine layers `out × in` then bias, ReLU on all but the last two.
fn forward(hp: &Hp, dims: &[usize], theta: &[F], x: &[F]) -> Vec<Vec<F>> {
    let layers = dims.len() - 1;
    let mut acts = vec![x.to_vec()];
    let mut off = 0;
    for l in 0..layers {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let w = &theta[off..off + fan_in * fan_out];
        let b = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let prev = acts.last().expect("non-empty");
        let zero = hp.c(0.0);
        let next = (0..fan_out)
            .map(|o| {
                let v = hp.add(&b[o], &hp.dot(&w[o * fan_in..(o + 1) * fan_in], prev));
                if l + 2 < layers && v.cmp(&zero).is_some_and(|c| c < 0) {
                    zero.clone()
                } else {
                    v
                }
            })
            .collect();
        acts.push(next);
    }
    acts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversion_round_trips() {
        let mut hp = Hp::new();
        for x in [1.0, -0.1, 1e-300, std::f64::consts::PI, -2.5e17, 0.0] {
            assert_eq!(hp.to_f64(&hp.c(x)), x);
        }
    }

    #[test]
    fn transcendental_accuracy() {
        let mut hp = Hp::new();
        // ln(exp(x)) − x should vanish far below f64 resolution.
        let x = hp.c(0.7);
        let e = hp.exp(&x);
        let l = hp.ln(&e);
        let r = hp.sub(&l, &x);
        assert!(hp.to_f64(&r).abs() < 1e-30);
        let two = hp.c(2.0);
        let s = hp.sqrt(&two);
        let back = hp.sub(&hp.mul(&s, &s), &two);
        assert!(hp.to_f64(&back).abs() < 1e-35);
    }

    #[test]
    fn difference_of_a_cubic_is_exact_to_h_squared() {
        let mut hp = Hp::new();
        let g = hp.central_difference(&[0.5], 1e-6, |hp, x| hp.mul(&x[0], &hp.mul(&x[0], &x[0])));
        // 3x² + h²
        assert!((g[0] - (0.75 + 1e-12)).abs() < 1e-20);
    }

    #[test]
    fn cosine_and_softmax_terms() {
        let mut hp = Hp::new();
        let a = hp.lift(&[3.0, 4.0]);
        let b = hp.lift(&[4.0, 3.0]);
        assert!((hp.to_f64(&hp.cos(&a, &b)) - 0.96).abs() < 1e-15);
        let z = hp.lift(&[0.0, 0.0]);
        let ce = ce_term(&mut hp, &z, 1);
        assert!((hp.to_f64(&ce) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn oracle_values_agree_with_f64_losses() {
        let inst = LossInstance::random(11);
        let mut o = LossOracle::new(&inst);
        let (mcc, _) = ecc_core::mcc_loss(&inst.batch, &inst.bank, &inst.sim).unwrap();
        let (clg, _) = ecc_core::clg_loss(&inst.batch, &inst.bank).unwrap();
        let feats: Vec<Vec<F>> = inst.batch.features().iter_rows().map(|r| o.hp.lift(r)).collect();
        let logits: Vec<Vec<F>> = inst.batch.logits().iter_rows().map(|r| o.hp.lift(r)).collect();
        let (mut m, mut c) = (o.hp.c(0.0), o.hp.c(0.0));
        for (k, &y) in inst.batch.labels().iter().enumerate() {
            assert_eq!(o.centers.most_similar(y), inst.sim.most_similar()[y]);
            m = o.hp.add(&m, &o.centers.mcc_term(&o.hp, &feats[k], y));
            let t = o.centers.clg_term(&mut o.hp, &logits[k], y);
            c = o.hp.add(&c, &t);
        }
        assert!((o.hp.to_f64(&m) - mcc).abs() < 1e-12);
        assert!((o.hp.to_f64(&c) - clg).abs() < 1e-12);
    }

    #[test]
    fn network_forward_agrees_with_model() {
        let inst = NetworkInstance::random(5);
        let mut hp = Hp::new();
        let theta = hp.lift(&inst.model.params_flat());
        let pass = inst.model.forward(&inst.inputs).unwrap();
        for (k, x) in inst.inputs.iter_rows().enumerate() {
            let acts = forward(&hp, inst.model.layer_dims(), &theta, &hp.lift(x));
            for (a, b) in acts.last().unwrap().iter().zip(pass.logits().row(k)) {
                assert!((hp.to_f64(a) - b).abs() < 1e-12);
            }
        }
    }
}
