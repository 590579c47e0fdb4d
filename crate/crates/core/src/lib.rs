//! Q-tensor fields on the unit ball under the unit-norm (Lyuksyutov) constraint:
//! energy minimization by projected gradient descent and analysis of the
//! eigenframe-discontinuity set (biaxiality scanning, vanishing-order
//! estimation, blow-up tangent-map fitting, defect classification).
//!
//! Module map:
//! - [`qtensor`]: algebra of symmetric traceless 3×3 tensors, biaxiality,
//!   analytic spectral decomposition, the tangent space `𝒰_p`.
//! - [`perturb`]: exact eigenvalue algebra near negative-uniaxial states and
//!   the decomposition `Q = -(√6/2)(p⊗p - Id/3) + U + R`.
//! - [`field`]: masked cubic grids over the ball, finite differences,
//!   interpolation, boundary data, synthetic defect fields.
//! - [`energy`]: discrete energy functionals, gradients, blow-up energy split.
//! - [`minimize`]: projected gradient descent with Armijo line search.
//! - [`defects`]: candidate detection, winding numbers, vanishing order,
//!   tangent-map fits and classification.
//! - [`io`]: field snapshots, VTK export, energy traces.

pub mod defects;
pub mod energy;
pub mod field;
pub mod io;
pub mod minimize;
pub mod perturb;
pub mod poly;
pub mod qtensor;


pub mod consts {
    pub const SQRT3: f64 = 1.732_050_807_568_877_2;
    pub const SQRT6: f64 = 2.449_489_742_783_178;
    /// √6/6 = 1/√6, the double positive eigenvalue of a unit negative-uniaxial tensor.
    pub const SQRT6_OVER_6: f64 = 0.408_248_290_463_863;
    pub const SQRT6_OVER_3: f64 = 0.816_496_580_927_726;
    pub const SQRT6_OVER_2: f64 = 1.224_744_871_391_589;
    /// 1/(3√6), the weight of the biaxiality penalty.
    pub const INV_3_SQRT6: f64 = 0.136_082_763_487_954_34;
    /// (3/2)^(1/4), leading coefficient of s(δ) ≈ (3/2)^(1/4) √δ.
    pub const POW_3_2_QUARTER: f64 = 1.106_681_919_700_321_5;

}
