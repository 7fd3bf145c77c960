//! Effective rod coefficients from a cross-section.
//!
//! The cross-section `S` (with nematic subdomain `S₀`) is triangulated, and
//! the corrector problems of an isotropic quadratic law are solved with
//! Lagrange or quadratic triangles. From the correctors we get the bending
//! and twist moduli, the spontaneous-curvature map `K_pre(U) = Σ (M u)_i K_i`
//! and the residual quadratic form `E_res`.

mod coefficients;
mod corrector;
mod fe;
mod law;
mod mesh;

pub use coefficients::{
    assemble_coefficients, assemble_coefficients_with, closed_form_disc, qbar_general_isotropic,
    reference_disc_halfplane_eres, relaxed_cell_energy, CoefficientsFile, DiscClosedForm,
    EffectiveCoefficients,
};
pub use corrector::{
    solve_corrector, solve_warping, CorrectorSolution, CorrectorSystem, WarpingSolution,
};
pub use fe::{ElementOrder, FeSpace, StrainField};
pub use law::IsotropicLaw;
pub use mesh::{CrossSectionMesh, MeshStats};
