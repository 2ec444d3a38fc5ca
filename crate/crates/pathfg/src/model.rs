//! Discrete-time LTI plant representation, zero-order-hold discretization,
//! equilibrium manifold parameterization, and the quadrotor outer-loop model.
//!
//! Sign convention note: the quadrotor model stores the literal hover input
//! `(m*g, 0, 0, 0)` with `g = -9.81 m/s^2` as reported by the source
//! platform parameters. The dynamics and all constraints operate on
//! deviation inputs (thrust deviation from hover, angular rates), so the
//! physical sign of the hover thrust never enters the closed loop. The
//! physically consistent hover thrust is `+0.31392 N`; both readings are
//! exposed and neither is silently "fixed".

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numkit::{self, solve_dare};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sampling time must be positive, got {0}")]
    BadSamplingTime(f64),
    #[error("mass must be positive, got {0}")]
    BadMass(f64),
    #[error("(A, B) is not stabilizable: {0}")]
    NotStabilizable(String),
    #[error("equilibrium kernel residual {0:.3e} exceeds 1e-9")]
    KernelResidual(f64),
}

/// Discrete-time LTI model with an equilibrium manifold parameterized by a
/// reference vector `r`: `x_bar = Gx r`, `u_bar = Gu r + u_offset`.
///
/// `xi_map` is the projection that extracts the agent position from the
/// full state.
#[derive(Debug, Clone)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub ts: f64,
    pub gx: DMatrix<f64>,
    pub gu: DMatrix<f64>,
    pub xi_map: DMatrix<f64>,
    /// Constant part of the equilibrium input in physical units. Zero for
    /// models whose input is already a deviation variable.
    pub u_offset: DVector<f64>,
}

impl LtiModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        ts: f64,
        gx: DMatrix<f64>,
        gu: DMatrix<f64>,
        xi_map: DMatrix<f64>,
        u_offset: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let nx = a.nrows();
        let nu = b.ncols();
        if a.ncols() != nx || b.nrows() != nx {
            return Err(ModelError::DimensionMismatch("A/B shapes".into()));
        }
        if gx.nrows() != nx || gu.nrows() != nu || gx.ncols() != gu.ncols() {
            return Err(ModelError::DimensionMismatch("Gx/Gu shapes".into()));
        }
        if xi_map.ncols() != nx {
            return Err(ModelError::DimensionMismatch("xi_map columns".into()));
        }
        if u_offset.len() != nu {
            return Err(ModelError::DimensionMismatch("u_offset length".into()));
        }
        if ts <= 0.0 {
            return Err(ModelError::BadSamplingTime(ts));
        }
        let model = LtiModel {
            a,
            b,
            ts,
            gx,
            gu,
            xi_map,
            u_offset,
        };
        // columns of [Gx; Gu] must span ker [A - I, B]
        let res = model.kernel_residual();
        if res > 1e-9 {
            return Err(ModelError::KernelResidual(res));
        }
        // stabilizability check via Riccati convergence with Q = R = I
        let q = DMatrix::identity(nx, nx);
        let r = DMatrix::identity(nu, nu);
        solve_dare(&model.a, &model.b, &q, &r, 1e-10)
            .map_err(|e| ModelError::NotStabilizable(e.to_string()))?;
        Ok(model)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn reference_dim(&self) -> usize {
        self.gx.ncols()
    }

    pub fn position_dim(&self) -> usize {
        self.xi_map.nrows()
    }

    /// Frobenius norm of `[A - I, B] [Gx; Gu]`.
    pub fn kernel_residual(&self) -> f64 {
        let nx = self.state_dim();
        let z_top = &self.a - DMatrix::identity(nx, nx);
        (&z_top * &self.gx + &self.b * &self.gu).norm()
    }

    /// Equilibrium pair for a reference, in model coordinates.
    pub fn equilibrium_for_reference(
        &self,
        r: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>), ModelError> {
        if r.len() != self.reference_dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "reference has {} entries, expected {}",
                r.len(),
                self.reference_dim()
            )));
        }
        Ok((&self.gx * r, &self.gu * r))
    }

    /// Equilibrium input in physical units, including the stored offset.
    pub fn physical_equilibrium_input(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.gu * r + &self.u_offset
    }

    /// One plant step.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn position_of(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.xi_map * x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadrotorParams {
    pub mass_kg: f64,
    pub gravity_mps2: f64,
    pub ts_s: f64,
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mass_kg <= 0.0 {
            return Err(ModelError::BadMass(self.mass_kg));
        }
        if self.ts_s <= 0.0 {
            return Err(ModelError::BadSamplingTime(self.ts_s));
        }
        Ok(())
    }
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        QuadrotorParams {
            mass_kg: 0.032,
            gravity_mps2: -9.81,
            ts_s: 0.1,
        }
    }
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    let norm = m.abs().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Exact zero-order-hold discretization via the augmented-matrix exponential
/// `exp([[Ac, Bc], [0, 0]] Ts) = [[A, B], [0, I]]`.
pub fn discretize_zoh(
    ac: &DMatrix<f64>,
    bc: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ModelError> {
    let nx = ac.nrows();
    if ac.ncols() != nx {
        return Err(ModelError::DimensionMismatch("Ac is not square".into()));
    }
    if bc.nrows() != nx {
        return Err(ModelError::DimensionMismatch(
            "Bc row count does not match Ac".into(),
        ));
    }
    if ts <= 0.0 {
        return Err(ModelError::BadSamplingTime(ts));
    }
    let nu = bc.ncols();
    let dim = nx + nu;
    let mut aug = DMatrix::zeros(dim, dim);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&(ac * ts));
    aug.view_mut((0, nx), (nx, nu)).copy_from(&(bc * ts));
    let e = expm(&aug);
    let a = e.view((0, 0), (nx, nx)).into_owned();
    let b = e.view((0, nx), (nx, nu)).into_owned();
    Ok((a, b))
}

/// Continuous-time outer-loop quadrotor matrices (position, velocity, Euler
/// attitude; thrust deviation and angular rates).
pub fn quadrotor_continuous(params: &QuadrotorParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = params.gravity_mps2;
    let m = params.mass_kg;
    let mut ac = DMatrix::zeros(9, 9);
    // d(position)/dt = velocity
    for i in 0..3 {
        ac[(i, 3 + i)] = 1.0;
    }
    // d(velocity)/dt = G * attitude, G = [[0, g, 0], [-g, 0, 0], [0, 0, 0]]
    ac[(3, 7)] = g;
    ac[(4, 6)] = -g;
    let mut bc = DMatrix::zeros(9, 4);
    bc[(5, 0)] = 1.0 / m; // thrust deviation -> vertical acceleration
    for i in 0..3 {
        bc[(6 + i, 1 + i)] = 1.0; // angular rates drive attitude
    }
    (ac, bc)
}

/// Builds the discretized quadrotor model with position references.
///
/// The equilibrium map is `x_bar = Xi' r` (position setpoint, zero velocity
/// and attitude) with zero deviation input; the paper-literal hover input
/// `(m*g, 0, 0, 0)` is stored as the physical input offset.
pub fn build_quadrotor_model(params: &QuadrotorParams) -> Result<LtiModel, ModelError> {
    params.validate()?;
    let (ac, bc) = quadrotor_continuous(params);
    let (a, b) = discretize_zoh(&ac, &bc, params.ts_s)?;
    let mut xi = DMatrix::zeros(3, 9);
    for i in 0..3 {
        xi[(i, i)] = 1.0;
    }
    let gx = xi.transpose();
    let gu = DMatrix::zeros(4, 3);
    let mut u_offset = DVector::zeros(4);
    u_offset[0] = params.mass_kg * params.gravity_mps2;
    LtiModel::new(a, b, params.ts_s, gx, gu, xi, u_offset)
}

/// Stabilizability probe used by callers that construct models directly.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let q = DMatrix::identity(a.nrows(), a.nrows());
    let r = DMatrix::identity(b.ncols(), b.ncols());
    numkit::solve_dare(a, b, &q, &r, 1e-9).is_ok()
}
