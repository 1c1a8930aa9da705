//! Initial-field descriptors.
//!
//! A descriptor is either a leaf (an analytic Gaussian, a snapshot, a saved
//! ground state) or a transform wrapping another descriptor in `of`:
//!
//! ```json
//! {"kind": "boost", "xi": [0, 0, 0.5],
//!  "of": {"kind": "scaled", "s": 0.8, "of": {"kind": "ground_state", "path": "run/ground_state"}}}
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dnls_core::functionals::{galilean_boost, report};
use dnls_core::ground_state::GroundState;
use dnls_core::kernel::DipoleParams;
use dnls_core::snapshot::{Snapshot, SnapshotError};
use dnls_core::spectral::{Field3D, Grid, C64};
use dnls_core::threshold::{project_field_to_i_zero, raise_mass};
use serde::{Deserialize, Serialize};
use thiserror::Error;

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitDescriptor {
    /// `amp * exp(-sum ((x_j - offset_j) / widths_j)^2 / 2) * exp(i boost . x)`.
    Gaussian {
        #[serde(default = "one")]
        amp: f64,
        widths: [f64; 3],
        #[serde(default)]
        offset: [f64; 3],
        #[serde(default)]
        boost: [f64; 3],
    },
    /// A binary snapshot file.
    Snapshot { path: PathBuf },
    /// A saved ground state, given as `dir/stem` (an extension is ignored).
    GroundState { path: PathBuf },
    /// The mass-preserving dilation `s^{3/2} u(s x)`.
    Scaled { s: f64, of: Box<InitDescriptor> },
    /// `a u(b x)`.
    Rescaled { a: f64, b: f64, of: Box<InitDescriptor> },
    /// `exp(i xi . x) u`.
    Boost { xi: [f64; 3], of: Box<InitDescriptor> },
    /// The dilation of `u` with `I = 0`.
    IZero { of: Box<InitDescriptor> },
    /// The mass-raising rescale of a field with `I = 0` up to `target`.
    MassRaise { target: f64, of: Box<InitDescriptor> },
}

#[derive(Debug, Error)]
pub enum InitError {
    #[error("{0}: an analytic field needs a grid in the config")]
    NoGrid(String),
    #[error("{path}: {source}")]
    Snapshot {
        path: String,
        #[source]
        source: SnapshotError,
    },
    #[error("{path}: {reason}")]
    Input { path: String, reason: String },
    #[error("{path}: {reason}")]
    Transform { path: String, reason: String },
}

fn finite3(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl InitDescriptor {
    /// Checks every parameter; errors are prefixed with the descriptor path.
    pub fn validate(&self, at: &str) -> Result<(), String> {
        let fail = |field: &str, msg: &str| Err(format!("{at}.{field}: {msg}"));
        match self {
            InitDescriptor::Gaussian { amp, widths, offset, boost } => {
                if !amp.is_finite() {
                    return fail("amp", "must be finite");
                }
                if !widths.iter().all(|w| positive(*w)) {
                    return fail("widths", "must be positive");
                }
                if !finite3(offset) {
                    return fail("offset", "must be finite");
                }
                if !finite3(boost) {
                    return fail("boost", "must be finite");
                }
                Ok(())
            }
            InitDescriptor::Snapshot { path } | InitDescriptor::GroundState { path } => {
                if path.as_os_str().is_empty() {
                    return fail("path", "must not be empty");
                }
                Ok(())
            }
            InitDescriptor::Scaled { s, of } => {
                if !positive(*s) {
                    return fail("s", "must be positive");
                }
                of.validate(&format!("{at}.of"))
            }
            InitDescriptor::Rescaled { a, b, of } => {
                if !a.is_finite() {
                    return fail("a", "must be finite");
                }
                if !positive(*b) {
                    return fail("b", "must be positive");
                }
                of.validate(&format!("{at}.of"))
            }
            InitDescriptor::Boost { xi, of } => {
                if !finite3(xi) {
                    return fail("xi", "must be finite");
                }
                of.validate(&format!("{at}.of"))
            }
            InitDescriptor::IZero { of } => of.validate(&format!("{at}.of")),
            InitDescriptor::MassRaise { target, of } => {
                if !positive(*target) {
                    return fail("target", "must be positive");
                }
                of.validate(&format!("{at}.of"))
            }
        }
    }

    /// True when the innermost leaf is analytic and so needs a grid.
    pub fn needs_grid(&self) -> bool {
        match self {
            InitDescriptor::Gaussian { .. } => true,
            InitDescriptor::Snapshot { .. } | InitDescriptor::GroundState { .. } => false,
            InitDescriptor::Scaled { of, .. }
            | InitDescriptor::Rescaled { of, .. }
            | InitDescriptor::Boost { of, .. }
            | InitDescriptor::IZero { of }
            | InitDescriptor::MassRaise { of, .. } => of.needs_grid(),
        }
    }

    /// Files the descriptor reads.
    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            InitDescriptor::Gaussian { .. } => Vec::new(),
            InitDescriptor::Snapshot { path } => vec![path.clone()],
            InitDescriptor::GroundState { path } => {
                let (dir, stem) = split_stem(path);
                vec![dir.join(format!("{stem}.snap")), dir.join(format!("{stem}.json"))]
            }
            InitDescriptor::Scaled { of, .. }
            | InitDescriptor::Rescaled { of, .. }
            | InitDescriptor::Boost { of, .. }
            | InitDescriptor::IZero { of }
            | InitDescriptor::MassRaise { of, .. } => of.inputs(),
        }
    }
}

/// Splits `dir/stem[.ext]` into the directory and the stem.
pub fn split_stem(path: &Path) -> (PathBuf, String) {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    (dir, stem)
}

fn on_grid(field: Field3D, grid: Option<&Arc<Grid>>, path: &str) -> Result<Field3D, InitError> {
    match grid {
        Some(g) if g.spec() != field.grid().spec() => Err(InitError::Snapshot {
            path: path.to_string(),
            source: SnapshotError::GridMismatch {
                expected: g.spec(),
                found: field.grid().spec(),
            },
        }),
        _ => Ok(field),
    }
}

/// Builds the field described by `desc`. With `grid` set, file leaves must
/// match it; without it they define the grid.
pub fn realize(desc: &InitDescriptor, grid: Option<&Arc<Grid>>, p: &DipoleParams) -> Result<Field3D, InitError> {
    realize_at(desc, grid, p, "init")
}

fn realize_at(desc: &InitDescriptor, grid: Option<&Arc<Grid>>, p: &DipoleParams, at: &str) -> Result<Field3D, InitError> {
    let inner = |of: &InitDescriptor| realize_at(of, grid, p, &format!("{at}.of"));
    match desc {
        InitDescriptor::Gaussian { amp, widths, offset, boost } => {
            let g = grid.ok_or_else(|| InitError::NoGrid(at.to_string()))?;
            Ok(Field3D::from_fn(g, |x| {
                let mut q = 0.0;
                let mut phase = 0.0;
                for j in 0..3 {
                    let y = (x[j] - offset[j]) / widths[j];
                    q += y * y;
                    phase += boost[j] * x[j];
                }
                C64::from_polar(amp * (-0.5 * q).exp(), phase)
            }))
        }
        InitDescriptor::Snapshot { path } => {
            let snap_err = |source| InitError::Snapshot {
                path: format!("{at}.path ({})", path.display()),
                source,
            };
            let snap = Snapshot::load(path).map_err(snap_err)?;
            match grid {
                Some(g) => snap.into_field(g).map_err(snap_err),
                None => snap.into_field_on_own_grid().map_err(snap_err),
            }
        }
        InitDescriptor::GroundState { path } => {
            let (dir, stem) = split_stem(path);
            let gs = GroundState::load(&dir, &stem).map_err(|e| InitError::Input {
                path: format!("{at}.path ({})", path.display()),
                reason: e.to_string(),
            })?;
            on_grid(gs.field, grid, &format!("{at}.path ({})", path.display()))
        }
        InitDescriptor::Scaled { s, of } => Ok(inner(of)?.l2_dilation(*s)),
        InitDescriptor::Rescaled { a, b, of } => Ok(inner(of)?.rescale(*a, *b)),
        InitDescriptor::Boost { xi, of } => {
            let u = inner(of)?;
            let nyquist = std::f64::consts::PI / u.grid().spacing();
            if xi.iter().any(|x| x.abs() >= nyquist) {
                return Err(InitError::Transform {
                    path: format!("{at}.xi"),
                    reason: format!("{xi:?} reaches the grid Nyquist wavenumber {nyquist:.4}"),
                });
            }
            Ok(galilean_boost(&u, *xi))
        }
        InitDescriptor::IZero { of } => {
            let u = inner(of)?;
            project_field_to_i_zero(&u, p)
                .map(|(v, _)| v)
                .map_err(|e| InitError::Transform {
                    path: at.to_string(),
                    reason: e.to_string(),
                })
        }
        InitDescriptor::MassRaise { target, of } => {
            let u = inner(of)?;
            let r = report(&u, p);
            let tol = 1e-6 * r.kinetic.max(f64::MIN_POSITIVE);
            if r.i_value.abs() > tol {
                return Err(InitError::Transform {
                    path: at.to_string(),
                    reason: format!("mass_raise needs I(u) = 0, got I = {:.3e}; wrap the field in i_zero", r.i_value),
                });
            }
            let (_, tau, sigma) = raise_mass(&r, *target, p).map_err(|e| InitError::Transform {
                path: at.to_string(),
                reason: e.to_string(),
            })?;
            Ok(u.rescale((tau * sigma).sqrt(), sigma))
        }
    }
}
