use crate::billiard::Spectrum;
use crate::ensembles::OperatorMatrix;
use crate::error::{Error, Result};

/// `[H, O]` in the energy basis: entry `(m, n)` is `(E_m - E_n) O_mn`.
pub fn liouvillian_apply(spectrum: &Spectrum, o: &OperatorMatrix) -> Result<OperatorMatrix> {
    let dim = spectrum.n_max();
    if o.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: o.dim(),
        });
    }
    Ok(OperatorMatrix::from_fn(dim, |m, n| {
        o.get(m, n) * spectrum.gap(m, n)
    }))
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;

    #[test]
    fn diagonal_operator_is_annihilated() {
        let s = Spectrum::from_energies(vec![0.5, 1.0, 4.0]).unwrap();
        let o = OperatorMatrix::from_real_rows(&[
            &[1.0, 0.0, 0.0],
            &[0.0, -2.0, 0.0],
            &[0.0, 0.0, 3.0],
        ])
        .unwrap();
        let lo = liouvillian_apply(&s, &o).unwrap();
        assert!(lo.as_slice().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn two_level_hand_evaluation() {
        let e = 2.5;
        let s = Spectrum::from_energies(vec![0.0, e]).unwrap();
        let o = OperatorMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let lo = liouvillian_apply(&s, &o).unwrap();
        let expected = OperatorMatrix::from_real_rows(&[&[0.0, -e], &[e, 0.0]]).unwrap();
        assert_eq!(lo, expected);
    }

    #[test]
    fn linear() {
        let s = Spectrum::from_energies(vec![0.0, 1.0, 3.0]).unwrap();
        let a =
            OperatorMatrix::from_fn(3, |m, n| Complex64::new((m + 2 * n) as f64, m as f64 - 0.5));
        let b = OperatorMatrix::from_fn(3, |m, n| Complex64::new(1.0 / (1 + m + n) as f64, 0.25));
        let (alpha, beta) = (Complex64::new(0.5, 0.0), Complex64::new(-2.0, 0.0));
        let lhs = liouvillian_apply(&s, &a.combine(alpha, &b, beta).unwrap()).unwrap();
        let rhs = liouvillian_apply(&s, &a)
            .unwrap()
            .combine(alpha, &liouvillian_apply(&s, &b).unwrap(), beta)
            .unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn dimension_mismatch() {
        let s = Spectrum::from_energies(vec![0.0, 1.0, 3.0]).unwrap();
        let o = OperatorMatrix::zeros(2);
        assert!(matches!(
            liouvillian_apply(&s, &o),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }
}
