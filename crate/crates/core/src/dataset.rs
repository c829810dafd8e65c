//! Trial data container: one row per subject, `O_i = (W_i, A_i, X_i, Δ_i)`,
//! plus the randomization probability `π` known by design.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset<F> {
    covariates: Vec<F>, // row-major n*p
    p: usize,
    treatment: Vec<u8>,
    time: Vec<F>,
    event: Vec<u8>,
    pi: F,
}

/// Borrowed view of a single subject, used for out-of-fold evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SubjectObs<'a, F> {
    pub covariates: &'a [F],
    pub treatment: u8,
    pub time: F,
    pub event: u8,
}

impl<F: Scalar> TrialDataset<F> {
    /// Build and validate a dataset. `covariates` is row-major with `p`
    /// columns (may be empty with `p = 0`).
    pub fn new(
        covariates: Vec<F>,
        p: usize,
        treatment: Vec<u8>,
        time: Vec<F>,
        event: Vec<u8>,
        pi: F,
    ) -> Result<Self> {
        let n = time.len();
        if n == 0 {
            return Err(Error::invalid("empty sample"));
        }
        if treatment.len() != n || event.len() != n {
            return Err(Error::invalid(format!(
                "column lengths differ: time {}, treatment {}, event {}",
                n,
                treatment.len(),
                event.len()
            )));
        }
        if covariates.len() != n * p {
            return Err(Error::invalid(format!(
                "covariate matrix has {} entries, expected {} ({} rows x {} columns)",
                covariates.len(),
                n * p,
                n,
                p
            )));
        }
        if !(pi > F::zero() && pi < F::one()) {
            return Err(Error::invalid("pi must lie strictly inside (0,1)"));
        }
        for (i, &t) in time.iter().enumerate() {
            if !t.is_finite() || t <= F::zero() {
                return Err(Error::invalid(format!(
                    "row {i}: time must be strictly positive and finite"
                )));
            }
        }
        for (i, &a) in treatment.iter().enumerate() {
            if a > 1 {
                return Err(Error::invalid(format!("row {i}: treatment must be 0 or 1")));
            }
        }
        for (i, &d) in event.iter().enumerate() {
            if d > 1 {
                return Err(Error::invalid(format!("row {i}: event must be 0 or 1")));
            }
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "row {}: covariate column {} is not finite (missing values must be imputed before construction)",
                i / p.max(1),
                i % p.max(1)
            )));
        }
        let n1 = treatment.iter().filter(|&&a| a == 1).count();
        if n1 == 0 || n1 == n {
            return Err(Error::invalid("both treatment arms must be non-empty"));
        }
        if !event.contains(&1) {
            return Err(Error::invalid("at least one event is required"));
        }
        Ok(TrialDataset { covariates, p, treatment, time, event, pi })
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn pi(&self) -> F {
        self.pi
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn time(&self) -> &[F] {
        &self.time
    }

    pub fn event(&self) -> &[u8] {
        &self.event
    }

    pub fn covariates(&self) -> &[F] {
        &self.covariates
    }

    pub fn covariate_row(&self, i: usize) -> &[F] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn subject(&self, i: usize) -> SubjectObs<'_, F> {
        SubjectObs {
            covariates: self.covariate_row(i),
            treatment: self.treatment[i],
            time: self.time[i],
            event: self.event[i],
        }
    }

    pub fn n_arm(&self, arm: u8) -> usize {
        self.treatment.iter().filter(|&&a| a == arm).count()
    }

    /// Per-arm `(time, event)` slices, preserving row order.
    pub fn arm_times_events(&self, arm: u8) -> (Vec<F>, Vec<u8>) {
        let mut t = Vec::new();
        let mut e = Vec::new();
        for i in 0..self.n() {
            if self.treatment[i] == arm {
                t.push(self.time[i]);
                e.push(self.event[i]);
            }
        }
        (t, e)
    }

    /// New dataset holding the given rows (validated like any other dataset,
    /// so degenerate subsets are rejected).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut covariates = Vec::with_capacity(rows.len() * self.p);
        let mut treatment = Vec::with_capacity(rows.len());
        let mut time = Vec::with_capacity(rows.len());
        let mut event = Vec::with_capacity(rows.len());
        for &i in rows {
            covariates.extend_from_slice(self.covariate_row(i));
            treatment.push(self.treatment[i]);
            time.push(self.time[i]);
            event.push(self.event[i]);
        }
        TrialDataset::new(covariates, self.p, treatment, time, event, self.pi)
    }

    pub fn leave_one_out(&self, drop: usize) -> Result<Self> {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| i != drop).collect();
        self.subset(&rows)
    }

    /// Copy with one extra subject appended (add-one perturbation used by
    /// the out-of-fold jackknife evaluation).
    pub fn with_appended(&self, s: SubjectObs<'_, F>) -> Result<Self> {
        if s.covariates.len() != self.p {
            return Err(Error::invalid("appended subject has wrong covariate width"));
        }
        let mut covariates = self.covariates.clone();
        covariates.extend_from_slice(s.covariates);
        let mut treatment = self.treatment.clone();
        treatment.push(s.treatment);
        let mut time = self.time.clone();
        time.push(s.time);
        let mut event = self.event.clone();
        event.push(s.event);
        TrialDataset::new(covariates, self.p, treatment, time, event, self.pi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrialDataset<f64> {
        TrialDataset::new(
            vec![0.1, 0.2, 0.3, 0.4],
            1,
            vec![1, 0, 1, 0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![1, 1, 0, 1],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn accessors() {
        let d = small();
        assert_eq!(d.n(), 4);
        assert_eq!(d.p(), 1);
        assert_eq!(d.n_arm(1), 2);
        assert_eq!(d.covariate_row(2), &[0.3]);
        let (t, e) = d.arm_times_events(0);
        assert_eq!(t, vec![2.0, 4.0]);
        assert_eq!(e, vec![1, 1]);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        // single-arm
        assert!(TrialDataset::new(vec![], 0, vec![1, 1], vec![1.0, 2.0], vec![1, 1], 0.5).is_err());
        // no events
        assert!(TrialDataset::new(vec![], 0, vec![1, 0], vec![1.0, 2.0], vec![0, 0], 0.5).is_err());
        // non-positive time names the row
        let err = TrialDataset::new(vec![], 0, vec![1, 0], vec![1.0, 0.0], vec![1, 1], 0.5)
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 1"), "{err}");
        // pi on the boundary
        assert!(TrialDataset::new(vec![], 0, vec![1, 0], vec![1.0, 2.0], vec![1, 1], 1.0).is_err());
        // non-finite covariate
        assert!(TrialDataset::new(
            vec![f64::NAN, 0.0],
            1,
            vec![1, 0],
            vec![1.0, 2.0],
            vec![1, 1],
            0.5
        )
        .is_err());
    }

    #[test]
    fn subset_and_append_round_trip() {
        let d = small();
        let s = d.subset(&[0, 1, 3]).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.time(), &[1.0, 2.0, 4.0]);
        let back = s.with_appended(d.subject(2)).unwrap();
        assert_eq!(back.n(), 4);
        assert_eq!(back.covariate_row(3), d.covariate_row(2));
        // dropping the only arm-1 events leaves a degenerate subset
        assert!(d.subset(&[1, 3]).is_err());
    }
}
