//! Numerical tolerances shared by the verification suites and the CLI.

/// Every tolerance used to accept a numerical result, in one place.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Relative self-convergence of quadrature estimates.
    pub quadrature_rel: f64,
    /// Toy-kernel residue sums and their extrapolated limit (relative).
    pub toy_residue_rel: f64,
    /// Mellin quadrature against `σ^{−z}Γ(z)`.
    pub mellin: f64,
    /// `|LHS − ΣRes| ≤ tol·max(1, |LHS|)` at finite `R`.
    pub finite_r: f64,
    /// Currents of exact test forms.
    pub exact_form: f64,
    /// Agreement of currents built from different connections.
    pub connection_independence: f64,
    /// Relative pairing against the current, and across radii.
    pub relative_pairing: f64,
    /// Torus current (Euler characteristic zero).
    pub euler_zero: f64,
    /// Smallest magnitude accepted as a nonzero Euler current.
    pub euler_nonzero: f64,
    /// Stability under metric deformations (relative).
    pub metric_stability: f64,
    /// Residue pipeline against the current (relative).
    pub residue_vs_current: f64,
    /// Gaussian normalization of the fiber form.
    pub gaussian_normalization: f64,
    /// Gaussian-side fiber integrals, flat base.
    pub mathai_quillen_flat: f64,
    /// Gaussian-side fiber integrals, curved base.
    pub mathai_quillen_curved: f64,
    /// `Â` series coefficients.
    pub a_hat: f64,
    /// Minimum `R²` of the `ρ`-decay fit.
    pub decay_fit_r2: f64,
    /// Scalar against contour coefficient paths (relative).
    pub path_equivalence: f64,
    /// Contour deformation invariance (relative).
    pub contour_deformation: f64,
    /// Residues below this count as vanishing.
    pub residue_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            quadrature_rel: 1e-6,
            toy_residue_rel: 1e-8,
            mellin: 1e-10,
            finite_r: 1e-4,
            exact_form: 1e-6,
            connection_independence: 1e-6,
            relative_pairing: 1e-4,
            euler_zero: 1e-8,
            euler_nonzero: 1e-3,
            metric_stability: 1e-4,
            residue_vs_current: 1e-4,
            gaussian_normalization: 1e-10,
            mathai_quillen_flat: 1e-6,
            mathai_quillen_curved: 1e-4,
            a_hat: 1e-12,
            decay_fit_r2: 0.999,
            path_equivalence: 1e-7,
            contour_deformation: 1e-10,
            residue_floor: crate::zeta::RESIDUE_FLOOR,
        }
    }
}
