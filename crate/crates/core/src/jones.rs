//! Jones-calculus model of the Sagnac-Mach-Zehnder (SMZI) receiver.
//!
//! The SMZI is an asymmetric Mach-Zehnder interferometer closed into a Sagnac
//! loop by a polarization beam splitter. The horizontal input component runs
//! clockwise, the vertical one counter-clockwise after a 90° rotation onto the
//! slow axis, and both pass Bob's phase modulator with the same polarization.
//! The path transforms here are assembled from the individual element matrices
//! so the composition itself is what gets tested against the closed forms.
//!
//! Element losses and PMF birefringence are omitted; PMF sections are identity.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance on the input norm accepted by [`smzi_outputs`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// A two-component polarization amplitude (horizontal, vertical).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector {
    pub h: Complex64,
    pub v: Complex64,
}

impl JonesVector {
    pub const HORIZONTAL: JonesVector = JonesVector { h: ONE, v: ZERO };
    pub const VERTICAL: JonesVector = JonesVector { h: ZERO, v: ONE };

    pub fn new(h: Complex64, v: Complex64) -> Self {
        Self { h, v }
    }

    /// Normalized state `(cos θ, e^{iβ} sin θ)`: θ is the angle to horizontal,
    /// β the phase delay between the vertical and horizontal components.
    pub fn from_angles(theta: f64, beta: f64) -> Self {
        Self {
            h: Complex64::new(theta.cos(), 0.0),
            v: Complex64::from_polar(theta.sin(), beta),
        }
    }

    /// `|h|² + |v|²`, the detected intensity of this amplitude.
    pub fn intensity(&self) -> f64 {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    /// Recovers (θ, β) with θ ∈ [0, π/2]. β is 0 when either component vanishes.
    pub fn angles(&self) -> (f64, f64) {
        let theta = self.v.norm().atan2(self.h.norm());
        let beta = if self.h.norm() == 0.0 || self.v.norm() == 0.0 {
            0.0
        } else {
            (self.v * self.h.conj()).arg()
        };
        (theta, beta)
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.intensity() - 1.0).abs() <= tol
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            h: self.h * c,
            v: self.v * c,
        }
    }
}

impl Add for JonesVector {
    type Output = JonesVector;

    fn add(self, rhs: JonesVector) -> JonesVector {
        JonesVector {
            h: self.h + rhs.h,
            v: self.v + rhs.v,
        }
    }
}

/// A 2×2 complex matrix acting on [`JonesVector`]s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix {
    pub m00: Complex64,
    pub m01: Complex64,
    pub m10: Complex64,
    pub m11: Complex64,
}

impl JonesMatrix {
    pub const IDENTITY: JonesMatrix = JonesMatrix {
        m00: ONE,
        m01: ZERO,
        m10: ZERO,
        m11: ONE,
    };

    pub const ZERO: JonesMatrix = JonesMatrix {
        m00: ZERO,
        m01: ZERO,
        m10: ZERO,
        m11: ZERO,
    };

    pub fn new(m00: Complex64, m01: Complex64, m10: Complex64, m11: Complex64) -> Self {
        Self { m00, m01, m10, m11 }
    }

    pub fn real(m00: f64, m01: f64, m10: f64, m11: f64) -> Self {
        Self::new(
            Complex64::new(m00, 0.0),
            Complex64::new(m01, 0.0),
            Complex64::new(m10, 0.0),
            Complex64::new(m11, 0.0),
        )
    }

    /// `c · I`.
    pub fn scalar(c: Complex64) -> Self {
        Self::new(c, ZERO, ZERO, c)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self::new(self.m00 * c, self.m01 * c, self.m10 * c, self.m11 * c)
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.m00, self.m10, self.m01, self.m11)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::new(
            self.m00.conj(),
            self.m10.conj(),
            self.m01.conj(),
            self.m11.conj(),
        )
    }

    pub fn det(&self) -> Complex64 {
        self.m00 * self.m11 - self.m01 * self.m10
    }

    pub fn apply(&self, x: &JonesVector) -> JonesVector {
        JonesVector {
            h: self.m00 * x.h + self.m01 * x.v,
            v: self.m10 * x.h + self.m11 * x.v,
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &JonesMatrix) -> f64 {
        [
            self.m00 - other.m00,
            self.m01 - other.m01,
            self.m10 - other.m10,
            self.m11 - other.m11,
        ]
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
    }

    /// Largest entrywise deviation of `U†U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        (self.adjoint() * *self).max_abs_diff(&JonesMatrix::IDENTITY)
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, b: JonesMatrix) -> JonesMatrix {
        let a = self;
        JonesMatrix {
            m00: a.m00 * b.m00 + a.m01 * b.m10,
            m01: a.m00 * b.m01 + a.m01 * b.m11,
            m10: a.m10 * b.m00 + a.m11 * b.m10,
            m11: a.m10 * b.m01 + a.m11 * b.m11,
        }
    }
}

impl Mul<JonesVector> for JonesMatrix {
    type Output = JonesVector;

    fn mul(self, x: JonesVector) -> JonesVector {
        self.apply(&x)
    }
}

impl Add for JonesMatrix {
    type Output = JonesMatrix;

    fn add(self, b: JonesMatrix) -> JonesMatrix {
        JonesMatrix {
            m00: self.m00 + b.m00,
            m01: self.m01 + b.m01,
            m10: self.m10 + b.m10,
            m11: self.m11 + b.m11,
        }
    }
}

/// Phase settings of Alice's and Bob's modulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSettings {
    /// Phase difference Alice imposes between the two time bins, radians.
    pub phi_a: f64,
    /// Phase applied by Bob's modulator (PMb), radians.
    pub phi_b: f64,
}

impl PhaseSettings {
    pub fn new(phi_a: f64, phi_b: f64) -> Self {
        Self { phi_a, phi_b }
    }

    /// Bob's modulator driven at `voltage` with half-wave voltage `v_pi`.
    pub fn from_voltage(phi_a: f64, voltage: f64, v_pi: f64) -> Self {
        Self {
            phi_a,
            phi_b: voltage_to_phase(voltage, v_pi),
        }
    }
}

/// `π · voltage / v_pi`, wrapped to [0, 2π).
pub fn voltage_to_phase(voltage: f64, v_pi: f64) -> f64 {
    (PI * voltage / v_pi).rem_euclid(2.0 * PI)
}

/// Rotation onto the slow axis at PBS1 port 3; same matrix both directions.
pub fn rotation_matrix() -> JonesMatrix {
    JonesMatrix::real(0.0, -1.0, 1.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    /// Polarization-maintaining 50:50 beam splitter.
    BeamSplitter,
    /// Polarization beam splitter.
    PolarizingBeamSplitter,
}

/// Port-to-port Jones matrix of the `index`th beam splitter or PBS.
///
/// Valid port pairs are 1↔2 (BS: transmission `1/√2`, PBS: passes horizontal)
/// and 1↔3 (BS: coupling `i/√2`, PBS: passes vertical). All beam splitters of a
/// kind are identical, so `index` only labels the element.
pub fn element_matrix(
    kind: ElementKind,
    index: u32,
    in_port: u8,
    out_port: u8,
) -> Result<JonesMatrix> {
    if index == 0 {
        return Err(invalid("element index starts at 1"));
    }
    let cross = match (in_port, out_port) {
        (1, 2) | (2, 1) => false,
        (1, 3) | (3, 1) => true,
        _ => {
            return Err(invalid(format!(
                "no optical path from port {in_port} to port {out_port}"
            )))
        }
    };
    Ok(match (kind, cross) {
        (ElementKind::BeamSplitter, false) => JonesMatrix::scalar(Complex64::new(FRAC_1_SQRT_2, 0.0)),
        (ElementKind::BeamSplitter, true) => JonesMatrix::scalar(Complex64::new(0.0, FRAC_1_SQRT_2)),
        (ElementKind::PolarizingBeamSplitter, false) => JonesMatrix::real(1.0, 0.0, 0.0, 0.0),
        (ElementKind::PolarizingBeamSplitter, true) => JonesMatrix::real(0.0, 0.0, 0.0, 1.0),
    })
}

fn bs(index: u32, j: u8, k: u8) -> JonesMatrix {
    element_matrix(ElementKind::BeamSplitter, index, j, k).expect("valid BS port pair")
}

fn pbs(index: u32, j: u8, k: u8) -> JonesMatrix {
    element_matrix(ElementKind::PolarizingBeamSplitter, index, j, k).expect("valid PBS port pair")
}

/// Which SMZI output is observed: the one recombined at PBS1 (SPD1) or PBS2 (SPD2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputPort {
    Pbs1,
    Pbs2,
}

/// Transfer matrices for the pulse taking the long arm (`long`) and the short
/// arm (`short`) of the AMZI, each the sum of its clockwise and
/// counter-clockwise contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTransforms {
    pub long: JonesMatrix,
    pub short: JonesMatrix,
}

/// Path transforms toward PBS1.
pub fn smzi_path_transforms(phi_b: f64) -> PathTransforms {
    path_transforms(OutputPort::Pbs1, phi_b)
}

/// Path transforms toward the given output, composed from element matrices.
///
/// Matrices are written right to left in propagation order. The clockwise
/// part enters PBS1 at port 1 and leaves at port 2 (horizontal); the
/// counter-clockwise part leaves at port 3 (vertical) and is rotated by `R`.
/// Toward PBS1 both parts cross the AMZI coupler twice on the long arm and
/// pass straight through on the short arm; toward PBS2 each arm takes one
/// crossing and one straight pass.
pub fn path_transforms(port: OutputPort, phi_b: f64) -> PathTransforms {
    let r = rotation_matrix();
    let pm_b = JonesMatrix::scalar(Complex64::from_polar(1.0, phi_b));

    match port {
        OutputPort::Pbs1 => {
            let long_cw = pbs(1, 3, 1) * r * bs(2, 3, 1) * pm_b * bs(1, 1, 3) * pbs(1, 1, 2);
            let long_ccw = pbs(1, 2, 1) * bs(1, 3, 1) * pm_b * bs(2, 1, 3) * r * pbs(1, 1, 3);
            let short_cw = pbs(1, 3, 1) * r * bs(2, 2, 1) * bs(1, 1, 2) * pbs(1, 1, 2);
            let short_ccw = pbs(1, 2, 1) * bs(1, 2, 1) * bs(2, 1, 2) * r * pbs(1, 1, 3);
            PathTransforms {
                long: long_cw + long_ccw,
                short: short_cw + short_ccw,
            }
        }
        OutputPort::Pbs2 => {
            let long_cw = pbs(2, 3, 1) * r * bs(2, 2, 1) * pm_b * bs(1, 1, 3) * pbs(1, 1, 2);
            let long_ccw = pbs(2, 2, 1) * bs(1, 2, 1) * pm_b * bs(2, 1, 3) * r * pbs(1, 1, 3);
            let short_cw = pbs(2, 3, 1) * r * bs(2, 3, 1) * bs(1, 1, 2) * pbs(1, 1, 2);
            let short_ccw = pbs(2, 2, 1) * bs(1, 3, 1) * bs(2, 1, 2) * r * pbs(1, 1, 3);
            PathTransforms {
                long: long_cw + long_ccw,
                short: short_cw + short_ccw,
            }
        }
    }
}

/// Output amplitudes `(E_out1, E_out2)` at PBS1 and PBS2 for a unit-norm input.
///
/// The short-arm pulse carries Alice's relative phase `e^{iφ_a}`. The
/// amplitudes are unnormalized; their intensities sum to one.
pub fn smzi_outputs(e_in: &JonesVector, phases: PhaseSettings) -> Result<(JonesVector, JonesVector)> {
    if !e_in.is_unit(UNIT_NORM_TOLERANCE) {
        return Err(invalid(format!(
            "input Jones vector has norm² {} (expected 1)",
            e_in.intensity()
        )));
    }
    let alice = Complex64::from_polar(1.0, phases.phi_a);
    let out = |port| {
        let t = path_transforms(port, phases.phi_b);
        (t.long + t.short.scale(alice)).apply(e_in)
    };
    Ok((out(OutputPort::Pbs1), out(OutputPort::Pbs2)))
}

/// Intensities at the two outputs: `½[1 ∓ cos(φ_a − φ_b)]`.
pub fn detection_probabilities(phases: PhaseSettings) -> (f64, f64) {
    let c = (phases.phi_a - phases.phi_b).cos();
    (0.5 * (1.0 - c), 0.5 * (1.0 + c))
}

/// Fringe visibility `(C_max − C_min)/(C_max + C_min)`.
pub fn visibility<T>(counts: &[T]) -> Result<f64>
where
    T: Copy + Into<f64>,
{
    if counts.len() < 2 {
        return Err(invalid("visibility needs at least two samples"));
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &c in counts {
        let c: f64 = c.into();
        if c.is_nan() || c < 0.0 {
            return Err(invalid(format!("count {c} is negative or NaN")));
        }
        max = max.max(c);
        min = min.min(c);
    }
    if max + min <= 0.0 {
        return Err(Error::UndefinedVisibility);
    }
    Ok((max - min) / (max + min))
}

/// Visibility of integer counts; converts through `f64`.
pub fn visibility_u64(counts: &[u64]) -> Result<f64> {
    let v: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    visibility(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close_vec(a: JonesVector, b: JonesVector, tol: f64) -> bool {
        (a.h - b.h).norm() < tol && (a.v - b.v).norm() < tol
    }

    fn closed_form(phi_b: f64) -> (JonesMatrix, JonesMatrix) {
        let r = JonesMatrix::real(0.0, -1.0, 1.0, 0.0);
        let long = r.scale(-Complex64::from_polar(1.0, phi_b) / 2.0);
        let short = r.scale(Complex64::new(0.5, 0.0));
        (long, short)
    }

    #[test]
    fn rotation_maps_h_to_v() {
        let r = rotation_matrix();
        assert!(close_vec(r * JonesVector::HORIZONTAL, JonesVector::VERTICAL, 1e-15));
        let minus_h = JonesVector::new(-ONE, ZERO);
        assert!(close_vec(r * JonesVector::VERTICAL, minus_h, 1e-15));
        assert!(close_vec(r * (r * JonesVector::HORIZONTAL), minus_h, 1e-15));
        assert!((r.transpose() * r).max_abs_diff(&JonesMatrix::IDENTITY) < 1e-15);
    }

    #[test]
    fn element_matrices() {
        let b12 = element_matrix(ElementKind::BeamSplitter, 1, 1, 2).unwrap();
        assert!(b12.max_abs_diff(&JonesMatrix::scalar(Complex64::new(FRAC_1_SQRT_2, 0.0))) < 1e-15);
        let b13 = element_matrix(ElementKind::BeamSplitter, 2, 1, 3).unwrap();
        assert_eq!(b13, element_matrix(ElementKind::BeamSplitter, 2, 3, 1).unwrap());
        assert_abs_diff_eq!(b13.m00.im, FRAC_1_SQRT_2);

        let p13 = element_matrix(ElementKind::PolarizingBeamSplitter, 1, 1, 3).unwrap();
        assert_eq!(p13, JonesMatrix::real(0.0, 0.0, 0.0, 1.0));
        let p12 = element_matrix(ElementKind::PolarizingBeamSplitter, 1, 1, 2).unwrap();
        let blocked = p12 * JonesVector::VERTICAL;
        assert_eq!(blocked.intensity(), 0.0);
    }

    #[test]
    fn element_matrix_rejects_bad_ports() {
        for (j, k) in [(2, 3), (3, 2), (1, 1), (0, 2), (1, 4)] {
            assert!(matches!(
                element_matrix(ElementKind::BeamSplitter, 1, j, k),
                Err(Error::InvalidInput(_))
            ));
        }
        assert!(element_matrix(ElementKind::PolarizingBeamSplitter, 0, 1, 2).is_err());
    }

    #[test]
    fn path_transform_special_phases() {
        let t = smzi_path_transforms(0.0);
        assert!((t.long + t.short).max_abs_diff(&JonesMatrix::ZERO) < 1e-15);
        let t = smzi_path_transforms(PI);
        assert!(t.long.max_abs_diff(&t.short) < 1e-15);
    }

    #[test]
    fn path_transform_matches_closed_form() {
        let t = smzi_path_transforms(0.7);
        let (long, short) = closed_form(0.7);
        assert!(t.long.max_abs_diff(&long) < 1e-12);
        assert!(t.short.max_abs_diff(&short) < 1e-12);
    }

    #[test]
    fn outputs_null_and_bright_fringe() {
        let h = JonesVector::from_angles(0.0, 0.0);
        let (o1, _) = smzi_outputs(&h, PhaseSettings::new(0.3, 0.3)).unwrap();
        assert!(o1.intensity() < 1e-30);
        let (o1, o2) = smzi_outputs(&h, PhaseSettings::new(0.0, PI)).unwrap();
        assert_abs_diff_eq!(o1.intensity(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o2.intensity(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn outputs_match_closed_forms() {
        let (theta, beta) = (37f64.to_radians(), 1.2);
        let e_in = JonesVector::from_angles(theta, beta);
        let (pa, pb) = (0.4, 1.1);
        let (o1, o2) = smzi_outputs(&e_in, PhaseSettings::new(pa, pb)).unwrap();
        let rotated = JonesVector::new(
            -Complex64::from_polar(theta.sin(), beta),
            Complex64::new(theta.cos(), 0.0),
        );
        let ea = Complex64::from_polar(1.0, pa);
        let eb = Complex64::from_polar(1.0, pb);
        let want1 = rotated.scale((ea - eb) / 2.0);
        let want2 = rotated.scale(Complex64::new(0.0, 0.5) * (ea + eb));
        assert!(close_vec(o1, want1, 1e-12));
        assert!(close_vec(o2, want2, 1e-12));

        let (r1, r2) = smzi_outputs(&JonesVector::HORIZONTAL, PhaseSettings::new(pa, pb)).unwrap();
        assert_abs_diff_eq!(o1.intensity(), r1.intensity(), epsilon = 1e-12);
        assert_abs_diff_eq!(o2.intensity(), r2.intensity(), epsilon = 1e-12);
    }

    #[test]
    fn outputs_reject_non_unit_input() {
        let e = JonesVector::new(Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0));
        assert!(matches!(
            smzi_outputs(&e, PhaseSettings::new(0.0, 0.0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn detection_probability_table() {
        let cases = [(0.0, (0.0, 1.0)), (PI / 2.0, (0.5, 0.5)), (PI, (1.0, 0.0))];
        for (delta, (a, b)) in cases {
            let (i1, i2) = detection_probabilities(PhaseSettings::new(delta, 0.0));
            assert_abs_diff_eq!(i1, a, epsilon = 1e-15);
            assert_abs_diff_eq!(i2, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn visibility_examples() {
        let v = visibility(&[10000.0, 40.0, 5021.0, 9987.0]).unwrap();
        assert_abs_diff_eq!(v, 9960.0 / 10040.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.992032, epsilon = 1e-6);
        assert_eq!(visibility(&[7.0, 7.0, 7.0]).unwrap(), 0.0);
        assert_eq!(visibility_u64(&[0, 5, 12]).unwrap(), 1.0);
        assert!(matches!(visibility(&[0.0, 0.0]), Err(Error::UndefinedVisibility)));
        assert!(visibility(&[1.0]).is_err());
    }

    #[test]
    fn voltage_scan_spans_two_fringes() {
        assert_abs_diff_eq!(voltage_to_phase(2.5, 2.5), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(voltage_to_phase(-2.5, 2.5), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(voltage_to_phase(5.0, 2.5), 0.0, epsilon = 1e-12);
        let s = PhaseSettings::from_voltage(0.2, 1.25, 2.5);
        assert_abs_diff_eq!(s.phi_b, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn ideal_sweep_has_unit_visibility() {
        let intensities: Vec<f64> = (-100..=100)
            .map(|i| {
                let s = PhaseSettings::from_voltage(0.0, i as f64 * 0.05, 2.5);
                detection_probabilities(s).0
            })
            .collect();
        assert_eq!(visibility(&intensities).unwrap(), 1.0);
    }

    #[test]
    fn angles_roundtrip() {
        let e = JonesVector::from_angles(0.6, -1.1);
        let (t, b) = e.angles();
        assert_abs_diff_eq!(t, 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(b, -1.1, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn polarization_insensitive_and_lossless(
            theta in 0.0..PI,
            beta in 0.0..(2.0 * PI),
            pa in -10.0f64..10.0,
            pb in -10.0f64..10.0,
        ) {
            let phases = PhaseSettings::new(pa, pb);
            let (o1, o2) = smzi_outputs(&JonesVector::from_angles(theta, beta), phases).unwrap();
            let (r1, r2) = smzi_outputs(&JonesVector::HORIZONTAL, phases).unwrap();
            prop_assert!((o1.intensity() - r1.intensity()).abs() < 1e-12);
            prop_assert!((o2.intensity() - r2.intensity()).abs() < 1e-12);
            prop_assert!((o1.intensity() + o2.intensity() - 1.0).abs() < 1e-12);
            let (i1, i2) = detection_probabilities(phases);
            prop_assert!((o1.intensity() - i1).abs() < 1e-12);
            prop_assert!((o2.intensity() - i2).abs() < 1e-12);
        }

        #[test]
        fn composition_matches_closed_form(phi_b in -20.0f64..20.0) {
            let t = smzi_path_transforms(phi_b);
            let (long, short) = closed_form(phi_b);
            prop_assert!(t.long.max_abs_diff(&long) < 1e-12);
            prop_assert!(t.short.max_abs_diff(&short) < 1e-12);
        }
    }
}
