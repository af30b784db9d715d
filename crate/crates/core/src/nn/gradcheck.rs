use super::mlp::Mlp;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-5;

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-5).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// Central finite differences of `f` at `x`.
pub fn numeric_gradient<F>(x: &[f64], mut f: F, h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compares the analytic parameter gradient of `loss` over the batch with
/// central differences and returns the max relative error.
pub fn gradient_check<F>(net: &Mlp, x: &[f64], rows: usize, loss: F) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = net.loss_grad(x, rows, &loss)?;
    let mut probe = net.clone();
    let numeric = numeric_gradient(
        net.params(),
        |p| {
            probe.params_mut().copy_from_slice(p);
            let out = probe.forward(x, rows).expect("shape checked above");
            loss(&out).0
        },
        FD_STEP,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gaussian_nll, gaussian_nll_grad, Activation, HeadSpec, NetworkSpec};
    use crate::rng::Rng;
    use rand::{Rng as _, SeedableRng};

    fn nll_loss(targets: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |out: &[f64]| {
            let n = targets.len() as f64;
            let mut l = 0.0;
            let mut d = vec![0.0; out.len()];
            for (r, t) in targets.iter().enumerate() {
                let (m, s) = (out[2 * r], out[2 * r + 1]);
                l += gaussian_nll(m, s, *t) / n;
                let (gm, gs) = gaussian_nll_grad(m, s, *t);
                d[2 * r] = gm / n;
                d[2 * r + 1] = gs / n;
            }
            (l, d)
        }
    }

    fn batch(rng: &mut Rng, rows: usize, dim: usize) -> Vec<f64> {
        (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn nll_gradient_matches() {
        let mut rng = Rng::seed_from_u64(1);
        let net = Mlp::new(NetworkSpec::gaussian(4, &[8, 8], 1), &mut rng).unwrap();
        let x = batch(&mut rng, 6, 4);
        let y = batch(&mut rng, 6, 1);
        let err = gradient_check(&net, &x, 6, nll_loss(y)).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn relu_gradient_matches_away_from_kinks() {
        let mut rng = Rng::seed_from_u64(2);
        let spec = NetworkSpec::new(3, &[6], vec![HeadSpec::new("v", 2)]).with_activation(Activation::Relu);
        let net = Mlp::new(spec, &mut rng).unwrap();
        let x = batch(&mut rng, 4, 3);
        let loss = |o: &[f64]| (o.iter().map(|v| v * v).sum::<f64>(), o.iter().map(|v| 2.0 * v).collect());
        assert!(gradient_check(&net, &x, 4, loss).unwrap() < 1e-4);
    }

    #[test]
    fn zero_loss_has_zero_error() {
        let mut rng = Rng::seed_from_u64(3);
        let net = Mlp::new(NetworkSpec::gaussian(2, &[4], 1), &mut rng).unwrap();
        let loss = |o: &[f64]| (0.0, vec![0.0; o.len()]);
        assert_eq!(gradient_check(&net, &[0.5, 0.5], 1, loss).unwrap(), 0.0);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = Rng::seed_from_u64(4);
        let net = Mlp::new(NetworkSpec::gaussian(4, &[8, 8], 1), &mut rng).unwrap();
        let x = batch(&mut rng, 6, 4);
        let y = batch(&mut rng, 6, 1);
        let good = nll_loss(y);
        let bad = |o: &[f64]| {
            let (l, mut d) = good(o);
            d[0] *= 1.5;
            (l, d)
        };
        assert!(gradient_check(&net, &x, 6, bad).unwrap() > 1e-2);
    }

    #[test]
    fn input_gradient_matches() {
        let mut rng = Rng::seed_from_u64(6);
        let net = Mlp::new(NetworkSpec::new(3, &[5, 5], vec![HeadSpec::new("q", 2)]), &mut rng).unwrap();
        let x = batch(&mut rng, 2, 3);
        let (_, tape) = net.forward_tape(&x, 2).unwrap();
        let d_out = vec![1.0, -0.5, 0.3, 2.0];
        let mut g = vec![0.0; net.n_params()];
        let dx = net.backward(&tape, &d_out, &mut g);
        let numeric = numeric_gradient(
            &x,
            |xi| {
                let o = net.forward(xi, 2).unwrap();
                o.iter().zip(&d_out).map(|(a, b)| a * b).sum()
            },
            FD_STEP,
        );
        assert!(max_relative_error(&dx, &numeric) < 1e-4);
    }
}
