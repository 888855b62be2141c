//! Geometric narrowband channels for the BS–IRS, BS–user and IRS–user links.
//!
//! Both arrays are uniform linear arrays with half-wavelength spacing, so the
//! response to a plane wave at angle `θ` is `exp(jπ m sin θ)` on element `m`.
//! Path gains are CN(0, 1). User `k` draws its angles from the `k`-th of `K`
//! equal slices of the angular domain.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::complex_normal;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemGeometry {
    /// BS antennas.
    pub m: usize,
    /// IRS elements.
    pub l: usize,
    /// Single-antenna users.
    pub k: usize,
    pub paths_bs_irs: usize,
    pub paths_bs_user: usize,
    pub paths_irs_user: usize,
    pub angle_min: f64,
    pub angle_max: f64,
}

impl SystemGeometry {
    pub fn new(m: usize, l: usize, k: usize) -> Self {
        SystemGeometry {
            m,
            l,
            k,
            paths_bs_irs: 5,
            paths_bs_user: 5,
            paths_irs_user: 5,
            angle_min: -PI / 2.0,
            angle_max: PI / 2.0,
        }
    }

    pub fn with_paths(mut self, bs_irs: usize, bs_user: usize, irs_user: usize) -> Self {
        self.paths_bs_irs = bs_irs;
        self.paths_bs_user = bs_user;
        self.paths_irs_user = irs_user;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("M", self.m),
            ("L", self.l),
            ("K", self.k),
            ("paths_bs_irs", self.paths_bs_irs),
            ("paths_bs_user", self.paths_bs_user),
            ("paths_irs_user", self.paths_irs_user),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.angle_min.is_finite() && self.angle_max.is_finite() && self.angle_min < self.angle_max) {
            return Err(Error::invalid(format!(
                "angular domain [{}, {}] is degenerate",
                self.angle_min, self.angle_max
            )));
        }
        Ok(())
    }

    /// Angular slice `[lo, hi]` owned by `user`.
    pub fn user_sector(&self, user: usize) -> (f64, f64) {
        let w = (self.angle_max - self.angle_min) / self.k as f64;
        let lo = self.angle_min + user as f64 * w;
        (lo, lo + w)
    }
}

/// Complex path gains with one angle per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub gains: Vec<Complex64>,
    pub angles: Vec<f64>,
}

impl PathSet {
    pub fn new(gains: Vec<Complex64>, angles: Vec<f64>) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::invalid("path set is empty"));
        }
        if gains.len() != angles.len() {
            return Err(Error::invalid(format!(
                "{} gains but {} angles",
                gains.len(),
                angles.len()
            )));
        }
        Ok(PathSet { gains, angles })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// Paths of the BS–IRS link; every path has a departure angle at the BS and
/// an arrival angle at the IRS.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPaths {
    pub gains: Vec<Complex64>,
    pub bs_angles: Vec<f64>,
    pub irs_angles: Vec<f64>,
}

/// Ground-truth channels of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_bs: CVector,
    pub h_irs: CVector,
    pub h: CMatrix,
    pub g: CMatrix,
}

pub fn steering_vector(angle: f64, n_elements: usize) -> Result<CVector> {
    if !angle.is_finite() {
        return Err(Error::invalid(format!("steering angle {angle} is not finite")));
    }
    if n_elements == 0 {
        return Err(Error::invalid("steering vector needs at least one element"));
    }
    let phase = PI * angle.sin();
    Ok(CVector::from_fn(n_elements, |m, _| {
        Complex64::from_polar(1.0, phase * m as f64)
    }))
}

/// `H = sqrt(M L / N_r) Σ_n α_n a_BS(φ_n) a_IRS(ϑ_n)^H`.
pub fn bs_irs_channel(geometry: &SystemGeometry, paths: &LinkPaths) -> Result<CMatrix> {
    let n = paths.gains.len();
    if n != geometry.paths_bs_irs || paths.bs_angles.len() != n || paths.irs_angles.len() != n {
        return Err(Error::invalid(format!(
            "BS-IRS link expects {} paths, got {} gains / {} BS angles / {} IRS angles",
            geometry.paths_bs_irs,
            n,
            paths.bs_angles.len(),
            paths.irs_angles.len()
        )));
    }
    let scale = ((geometry.m * geometry.l) as f64 / n as f64).sqrt();
    let mut h = CMatrix::zeros(geometry.m, geometry.l);
    for p in 0..n {
        let a_bs = steering_vector(paths.bs_angles[p], geometry.m)?;
        let a_irs = steering_vector(paths.irs_angles[p], geometry.l)?;
        h += (a_bs * a_irs.adjoint()) * (paths.gains[p] * scale);
    }
    Ok(h)
}

/// Draws the BS–IRS paths: CN(0,1) gains, both angles uniform over the domain.
pub fn draw_bs_irs_paths<R: Rng + ?Sized>(geometry: &SystemGeometry, rng: &mut R) -> LinkPaths {
    let n = geometry.paths_bs_irs;
    let mut paths = LinkPaths {
        gains: Vec::with_capacity(n),
        bs_angles: Vec::with_capacity(n),
        irs_angles: Vec::with_capacity(n),
    };
    for _ in 0..n {
        paths.gains.push(complex_normal(rng, 1.0));
        paths.bs_angles.push(rng.random_range(geometry.angle_min..=geometry.angle_max));
        paths.irs_angles.push(rng.random_range(geometry.angle_min..=geometry.angle_max));
    }
    paths
}

pub fn generate_bs_irs_channel<R: Rng + ?Sized>(geometry: &SystemGeometry, rng: &mut R) -> Result<CMatrix> {
    geometry.validate()?;
    let paths = draw_bs_irs_paths(geometry, rng);
    bs_irs_channel(geometry, &paths)
}

/// `h = sqrt(n / N) Σ_n α_n a(ϕ_n)`; used for both the BS–user and IRS–user links.
pub fn generate_user_channel(n_elements: usize, paths: &PathSet) -> Result<CVector> {
    if paths.is_empty() {
        return Err(Error::invalid("user channel needs at least one path"));
    }
    let scale = (n_elements as f64 / paths.len() as f64).sqrt();
    let mut h = CVector::zeros(n_elements);
    for (gain, &angle) in paths.gains.iter().zip(&paths.angles) {
        h += steering_vector(angle, n_elements)? * (*gain * scale);
    }
    Ok(h)
}

/// `G = H diag(h_IRS)`.
pub fn cascaded_channel(h: &CMatrix, h_irs: &CVector) -> Result<CMatrix> {
    if h.ncols() != h_irs.len() {
        return Err(Error::invalid(format!(
            "BS-IRS channel has {} columns but IRS-user channel has {} entries",
            h.ncols(),
            h_irs.len()
        )));
    }
    let mut g = h.clone();
    for (l, mut col) in g.column_iter_mut().enumerate() {
        col *= h_irs[l];
    }
    Ok(g)
}

/// Uniform angles inside `user`'s angular slice.
pub fn sample_user_angles<R: Rng + ?Sized>(
    geometry: &SystemGeometry,
    user: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if user >= geometry.k {
        return Err(Error::invalid(format!("user {user} out of range for K = {}", geometry.k)));
    }
    let (lo, hi) = geometry.user_sector(user);
    Ok((0..count).map(|_| rng.random_range(lo..=hi)).collect())
}

fn draw_user_paths<R: Rng + ?Sized>(
    geometry: &SystemGeometry,
    user: usize,
    count: usize,
    rng: &mut R,
) -> Result<PathSet> {
    let angles = sample_user_angles(geometry, user, count, rng)?;
    let gains = (0..count).map(|_| complex_normal(rng, 1.0)).collect();
    PathSet::new(gains, angles)
}

impl ChannelRealization {
    /// Draws user `user`'s direct and IRS links and composes them with a
    /// BS–IRS channel shared by all users of the same realization.
    pub fn draw<R: Rng + ?Sized>(
        geometry: &SystemGeometry,
        user: usize,
        bs_irs: &CMatrix,
        rng: &mut R,
    ) -> Result<Self> {
        if bs_irs.nrows() != geometry.m || bs_irs.ncols() != geometry.l {
            return Err(Error::invalid("BS-IRS channel does not match geometry"));
        }
        let direct = draw_user_paths(geometry, user, geometry.paths_bs_user, rng)?;
        let reflected = draw_user_paths(geometry, user, geometry.paths_irs_user, rng)?;
        let h_bs = generate_user_channel(geometry.m, &direct)?;
        let h_irs = generate_user_channel(geometry.l, &reflected)?;
        let g = cascaded_channel(bs_irs, &h_irs)?;
        Ok(ChannelRealization {
            h_bs,
            h_irs,
            h: bs_irs.clone(),
            g,
        })
    }
}
