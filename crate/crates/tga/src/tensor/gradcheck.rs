use crate::error::{Error, Result};

use super::{Graph, Tensor, Var};

fn eval_at<F>(f: &F, point: &Tensor, context: &str) -> Result<f32>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(point.data().to_vec(), point.shape())?);
    let out = f(&mut g, x)?;
    if g.tensor(out).numel() != 1 {
        return Err(Error::NonScalarOutput {
            shape: g.shape(out).to_vec(),
        });
    }
    let v = g.scalar_value(out);
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: context.to_string(),
        });
    }
    Ok(v)
}

/// Compare the reverse-mode gradient of a scalar function against central
/// differences at every coordinate of `point`. Returns the maximum of
/// `|ad - fd| / max(1, |fd|)` over the probed coordinates.
pub fn grad_check<F>(f: F, point: &Tensor, h: f32) -> Result<f32>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    grad_check_at(f, point, h, &coords)
}

/// [`grad_check`] restricted to a subset of coordinates; used when the full
/// sweep is too expensive (e.g. checking a model objective over a random
/// sample of parameter coordinates).
pub fn grad_check_at<F>(f: F, point: &Tensor, h: f32, coords: &[usize]) -> Result<f32>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Domain {
            op: "grad_check",
            reason: format!("step size must be positive, got {h}"),
        });
    }
    // Reverse-mode gradient at the point.
    let mut g = Graph::new();
    let probe = Tensor::new(point.data().to_vec(), point.shape())?.with_requires_grad();
    let x = g.leaf(probe);
    let out = f(&mut g, x)?;
    if g.tensor(out).numel() != 1 {
        return Err(Error::NonScalarOutput {
            shape: g.shape(out).to_vec(),
        });
    }
    if !g.scalar_value(out).is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check center".to_string(),
        });
    }
    let ad: Vec<f32> = if g.requires_grad(out) {
        g.backward(out)?;
        g.grad(x)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; point.numel()])
    } else {
        // f ignores its input entirely; the true gradient is zero.
        vec![0.0; point.numel()]
    };

    // Central differences, evaluated without any gradient machinery.
    let mut max_err = 0.0f32;
    let mut shifted = point.data().to_vec();
    for &i in coords {
        if i >= shifted.len() {
            return Err(Error::Domain {
                op: "grad_check",
                reason: format!("coordinate {i} out of range for {} elements", shifted.len()),
            });
        }
        let orig = shifted[i];
        shifted[i] = orig + h;
        let fp = eval_at(&f, &Tensor::new(shifted.clone(), point.shape())?, "grad_check +h")?;
        shifted[i] = orig - h;
        let fm = eval_at(&f, &Tensor::new(shifted.clone(), point.shape())?, "grad_check -h")?;
        shifted[i] = orig;
        let fd = ((fp as f64 - fm as f64) / (2.0 * h as f64)) as f32;
        let err = (ad[i] - fd).abs() / fd.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sum_of_squares_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let point = Tensor::new(data, &[8]).unwrap();
        let err = grad_check(
            |g, x| {
                let sq = g.hadamard(x, x)?;
                let m = g.mean(sq);
                Ok(g.scale(m, 8.0))
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "error {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let point = Tensor::new(vec![0.3, -0.4], &[2]).unwrap();
        let err = grad_check(
            |g, _x| {
                let c = g.constant(vec![2.5], &[1])?;
                Ok(g.mean(c))
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_probe_rejected() {
        // x + x is finite at the center but overflows f32 at the +h probe.
        let point = Tensor::new(vec![1.5e38], &[1]).unwrap();
        let res = grad_check(
            |g, x| {
                let doubled = g.add(x, x)?;
                Ok(g.mean(doubled))
            },
            &point,
            1e38,
        );
        assert!(matches!(res, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn subset_probing_checks_only_requested_coordinates() {
        let point = Tensor::new(vec![0.5, 0.25, -0.75, 1.0], &[4]).unwrap();
        let err = grad_check_at(
            |g, x| {
                let sq = g.hadamard(x, x)?;
                Ok(g.mean(sq))
            },
            &point,
            1e-3,
            &[0, 2],
        )
        .unwrap();
        assert!(err < 1e-4, "error {err}");
    }
}
