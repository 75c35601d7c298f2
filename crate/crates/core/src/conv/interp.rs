use crate::error::{mismatch, Error, Result};
use crate::geom::{relative_cosine, Rotation};
use crate::group::FiniteRotationGroup;

const EXACT_MATCH_RADIANS: f64 = 1e-9;

/// Normalized weights `exp(λ(cos θ_j − 1))` over the `k` group elements
/// nearest `query`, as `(element index, weight)` pairs nearest first.
pub fn spherical_interpolation_weights(
    group: &FiniteRotationGroup,
    query: &Rotation,
    k: usize,
    lambda: f64,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > group.order() {
        return Err(Error::InvalidArgument(format!(
            "interpolation needs 1 ≤ k ≤ {}, got {k}",
            group.order()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let mut cosines = group
        .elements()
        .iter()
        .enumerate()
        .map(|(j, g)| relative_cosine(query, g).map(|c| (j, c)))
        .collect::<Result<Vec<_>>>()?;
    cosines.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let (best, best_cos) = cosines[0];
    if best_cos.acos() < EXACT_MATCH_RADIANS {
        return Ok(vec![(best, 1.0)]);
    }
    let mut weights: Vec<(usize, f64)> = cosines[..k]
        .iter()
        .map(|&(j, c)| (j, (lambda * (c - 1.0)).exp()))
        .collect();
    let z: f64 = weights.iter().map(|w| w.1).sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::NonFinite("interpolation weights; lower lambda"));
    }
    weights.iter_mut().for_each(|w| w.1 /= z);
    Ok(weights)
}

/// Interpolates per-element features `features` (`|G| × D`) at `query`.
pub fn spherical_interpolate(
    features: &[f64],
    group: &FiniteRotationGroup,
    query: &Rotation,
    k: usize,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n_g = group.order();
    if features.is_empty() || features.len() % n_g != 0 {
        return Err(mismatch("spherical_interpolate", format!("{} values for |G| = {n_g}", features.len())));
    }
    let d = features.len() / n_g;
    let mut out = vec![0.0; d];
    for (j, w) in spherical_interpolation_weights(group, query, k, lambda)? {
        for (o, f) in out.iter_mut().zip(&features[j * d..(j + 1) * d]) {
            *o += w * f;
        }
    }
    Ok(out)
}

/// `∂L/∂features` (`|G| × D`) of [`spherical_interpolate`] given `∂L/∂out`.
pub fn spherical_interpolate_backward(
    group: &FiniteRotationGroup,
    query: &Rotation,
    k: usize,
    lambda: f64,
    d_out: &[f64],
) -> Result<Vec<f64>> {
    let d = d_out.len();
    let mut d_features = vec![0.0; group.order() * d];
    for (j, w) in spherical_interpolation_weights(group, query, k, lambda)? {
        for (o, g) in d_features[j * d..(j + 1) * d].iter_mut().zip(d_out) {
            *o = w * g;
        }
    }
    Ok(d_features)
}
