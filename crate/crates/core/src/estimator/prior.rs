use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::geometry::{minus_body, right_jacobian_inv, Pose};
use crate::imu::{ImuState, TH};

/// Eigenvalues below this fraction of the largest are dropped when the
/// prior information is factored.
const RANK_TOL: f64 = 1e-12;

/// Result of eliminating variables from a Gaussian in information form.
#[derive(Debug, Clone)]
pub struct SchurResult {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Diagonal loading was needed to invert the eliminated block.
    pub regularized: bool,
}

/// Eliminates the variables at `marg` from `½ xᵀHx + bᵀx`, returning the
/// information over the remaining variables in their original order.
pub fn schur_complement(h: &DMatrix<f64>, b: &DVector<f64>, marg: &[usize]) -> SchurResult {
    let n = h.nrows();
    let keep: Vec<usize> = (0..n).filter(|i| !marg.contains(i)).collect();
    let sub = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| h[(rows[i], cols[j])])
    };
    let h_mm = sub(marg, marg);
    let h_rm = sub(&keep, marg);
    let h_rr = sub(&keep, &keep);
    let b_m = DVector::from_fn(marg.len(), |i, _| b[marg[i]]);
    let b_r = DVector::from_fn(keep.len(), |i, _| b[keep[i]]);
    if marg.is_empty() {
        return SchurResult {
            h: h_rr,
            b: b_r,
            regularized: false,
        };
    }

    let sym = (&h_mm + h_mm.transpose()) * 0.5;
    let (chol, regularized) = match sym.clone().cholesky() {
        Some(c) => (c, false),
        None => {
            let scale = sym.diagonal().amax().max(1.0);
            let mut eps = 1e-9 * scale;
            loop {
                let loaded = &sym + DMatrix::identity(marg.len(), marg.len()) * eps;
                if let Some(c) = loaded.cholesky() {
                    break (c, true);
                }
                eps *= 10.0;
            }
        }
    };
    let x = chol.solve(&h_rm.transpose());
    let y = chol.solve(&b_m);
    let hs = &h_rr - &h_rm * &x;
    SchurResult {
        h: (&hs + hs.transpose()) * 0.5,
        b: b_r - &h_rm * y,
        regularized,
    }
}

/// Gaussian prior left behind by marginalization, stored in square-root
/// form `r(x) = r₀ + J·(x ⊟ x₀)` so that `‖r(x₀)‖² = bᵀH⁺b`.
///
/// The tangent layout is 15 dimensions per state (`[p, v, θ, b_a, b_g]`) in
/// `ids` order, followed by 6 for the extrinsic (`[p, θ]`) when present. The
/// Jacobian is evaluated once and kept (first-estimates).
#[derive(Debug, Clone)]
pub struct MarginalPrior {
    pub ids: Vec<u64>,
    pub states: Vec<ImuState>,
    pub ext: Option<Pose>,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

impl MarginalPrior {
    pub fn dim(&self) -> usize {
        15 * self.ids.len() + if self.ext.is_some() { 6 } else { 0 }
    }

    pub fn rows(&self) -> usize {
        self.residual.len()
    }

    /// Factors `(H, b)` at the linearization point.
    pub fn from_information(
        ids: Vec<u64>,
        states: Vec<ImuState>,
        ext: Option<Pose>,
        h: &DMatrix<f64>,
        b: &DVector<f64>,
    ) -> Self {
        let dim = h.nrows();
        let eig = SymmetricEigen::new((h + h.transpose()) * 0.5);
        let lmax = eig.eigenvalues.amax();
        let kept: Vec<usize> = (0..dim)
            .filter(|&i| lmax > 0.0 && eig.eigenvalues[i] > RANK_TOL * lmax)
            .collect();
        let mut jacobian = DMatrix::zeros(kept.len(), dim);
        let mut residual = DVector::zeros(kept.len());
        for (row, &i) in kept.iter().enumerate() {
            let l = eig.eigenvalues[i];
            let v = eig.eigenvectors.column(i);
            jacobian.row_mut(row).copy_from(&(v.transpose() * l.sqrt()));
            residual[row] = v.dot(b) / l.sqrt();
        }
        Self {
            ids,
            states,
            ext,
            jacobian,
            residual,
        }
    }

    /// `(JᵀJ, Jᵀr₀)`.
    pub fn information(&self) -> (DMatrix<f64>, DVector<f64>) {
        (
            self.jacobian.transpose() * &self.jacobian,
            self.jacobian.transpose() * &self.residual,
        )
    }

    /// Residual and Jacobian w.r.t. right-perturbations of the given
    /// states (and extrinsic), in the prior's tangent layout.
    pub fn evaluate(
        &self,
        states: &[ImuState],
        ext: Option<&Pose>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let dim = self.dim();
        let mut dx = DVector::zeros(dim);
        let mut jac = self.jacobian.clone();
        for (k, (x0, x)) in self.states.iter().zip(states).enumerate() {
            let d = x0.ominus(x);
            dx.rows_mut(15 * k, 15).copy_from(&d);
            let jr = right_jacobian_inv(&d.fixed_rows::<3>(TH).into_owned());
            let col = 15 * k + TH;
            let block = self.jacobian.columns(col, 3) * jr;
            jac.columns_mut(col, 3).copy_from(&block);
        }
        if let (Some(e0), Some(e)) = (&self.ext, ext) {
            let o = 15 * self.ids.len();
            let dp = e.translation - e0.translation;
            let dth = minus_body(&e0.rotation, &e.rotation);
            dx.rows_mut(o, 3).copy_from(&dp);
            dx.rows_mut(o + 3, 3).copy_from(&dth);
            let block = self.jacobian.columns(o + 3, 3) * right_jacobian_inv(&dth);
            jac.columns_mut(o + 3, 3).copy_from(&block);
        }
        (&self.residual + &self.jacobian * dx, jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconnected_state_leaves_zero_prior() {
        let mut h = DMatrix::zeros(3, 3);
        let mut b = DVector::zeros(3);
        h[(1, 1)] = 2.0;
        h[(1, 2)] = -1.0;
        h[(2, 1)] = -1.0;
        h[(2, 2)] = 1.0;
        b[1] = 0.3;
        let s = schur_complement(&h, &b, &[0]);
        assert!(s.regularized);
        assert_eq!(s.h, h.view((1, 1), (2, 2)).into_owned());
        assert_eq!(s.b, b.rows(1, 2).into_owned());
    }

    #[test]
    fn sqrt_form_reproduces_information() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 3.0, 0.1, 0.0, 0.1, 1.0]);
        let b = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let p = MarginalPrior::from_information(vec![], vec![], None, &a, &b);
        let (h2, b2) = p.information();
        assert!((h2 - &a).amax() < 1e-12);
        assert!((b2 - &b).amax() < 1e-12);
        let expected = b.dot(&(a.clone().try_inverse().unwrap() * &b));
        assert!((p.residual.norm_squared() - expected).abs() < 1e-12);
    }
}
