//! Named, bounded mechanistic parameter vectors and uniform priors.
//!
//! Simulator parameters travel as [`ParamVector`]s so that a fit result or
//! a posterior-mean estimate always carries its parameter names and the box
//! it is confined to. Priors are axis-aligned uniform boxes, which is all
//! the mechanistic models here use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A parameter vector with per-component names and box bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    names: Vec<String>,
    values: Vec<f64>,
    bounds: Vec<(f64, f64)>,
}

impl ParamVector {
    /// Build a vector, validating that names, values, and bounds agree in
    /// length and that every value lies inside its (closed) bounds.
    pub fn new(
        names: Vec<String>,
        values: Vec<f64>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<ParamVector> {
        if names.len() != values.len() || names.len() != bounds.len() {
            return Err(Error::Shape(format!(
                "param vector: {} names, {} values, {} bounds",
                names.len(),
                values.len(),
                bounds.len()
            )));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo <= hi) {
                return Err(Error::Validation(format!(
                    "bound for '{}' has lo {lo} > hi {hi}",
                    names[i]
                )));
            }
            if !(values[i] >= lo && values[i] <= hi) {
                return Err(Error::Validation(format!(
                    "value {} for '{}' outside [{lo}, {hi}]",
                    values[i], names[i]
                )));
            }
        }
        Ok(ParamVector { names, values, bounds })
    }

    /// Component count.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the vector has no components.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value of the named component.
    pub fn get(&self, name: &str) -> Result<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
            .ok_or_else(|| {
                Error::Validation(format!(
                    "no parameter '{name}' (have: {})",
                    self.names.join(", ")
                ))
            })
    }

    /// All values in declaration order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// All names in declaration order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// All bounds in declaration order.
    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
}

/// An axis-aligned uniform prior over a parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
}

impl PriorSpec {
    /// Build a prior from `(name, lo, hi)` triples; each interval must have
    /// positive width.
    pub fn new(dims: Vec<(String, f64, f64)>) -> Result<PriorSpec> {
        if dims.is_empty() {
            return Err(Error::Validation("prior must have at least one dimension".into()));
        }
        let mut names = Vec::with_capacity(dims.len());
        let mut bounds = Vec::with_capacity(dims.len());
        for (name, lo, hi) in dims {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Validation(format!(
                    "prior for '{name}' needs finite lo < hi, got [{lo}, {hi}]"
                )));
            }
            names.push(name);
            bounds.push((lo, hi));
        }
        Ok(PriorSpec { names, bounds })
    }

    /// Dimension count.
    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    /// True when the prior has no dimensions (never constructible).
    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// Names in declaration order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Bounds in declaration order.
    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Midpoint of the box, used as a fallback estimate.
    pub fn midpoint(&self) -> ParamVector {
        let values = self.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        ParamVector {
            names: self.names.clone(),
            values,
            bounds: self.bounds.clone(),
        }
    }

    /// Draw one parameter vector uniformly from the box.
    ///
    /// Consumes exactly `len()` uniform draws from `rng`, in declaration
    /// order, so sampling is reproducible stream-by-stream.
    pub fn sample(&self, rng: &mut RngStream) -> ParamVector {
        let values = self
            .bounds
            .iter()
            .map(|&(lo, hi)| rng.uniform(lo, hi))
            .collect();
        ParamVector {
            names: self.names.clone(),
            values,
            bounds: self.bounds.clone(),
        }
    }

    /// Restrict to a prefix of the dimensions (e.g. the SIR slice of a
    /// shared SIR/SEIR prior).
    pub fn prefix(&self, k: usize) -> Result<PriorSpec> {
        if k == 0 || k > self.len() {
            return Err(Error::Validation(format!(
                "prefix {k} out of range for {}-dim prior",
                self.len()
            )));
        }
        Ok(PriorSpec {
            names: self.names[..k].to_vec(),
            bounds: self.bounds[..k].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_prior() -> PriorSpec {
        PriorSpec::new(vec![
            ("alpha".into(), 0.5, 1.5),
            ("beta".into(), 0.5, 1.5),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let err = ParamVector::new(vec!["a".into()], vec![1.0, 2.0], vec![(0.0, 3.0)]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_out_of_bounds_value() {
        let err = ParamVector::new(vec!["a".into()], vec![2.0], vec![(0.0, 1.0)]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn get_by_name() {
        let p = ParamVector::new(
            vec!["beta".into(), "gamma".into()],
            vec![0.3, 0.1],
            vec![(0.1, 0.5), (0.05, 0.2)],
        )
        .unwrap();
        assert_eq!(p.get("beta").unwrap(), 0.3);
        assert_eq!(p.get("gamma").unwrap(), 0.1);
        assert!(p.get("sigma").is_err());
    }

    #[test]
    fn prior_rejects_empty_interval() {
        assert!(PriorSpec::new(vec![("a".into(), 1.0, 1.0)]).is_err());
        assert!(PriorSpec::new(vec![("a".into(), 2.0, 1.0)]).is_err());
    }

    #[test]
    fn samples_stay_in_the_box_and_fill_it() {
        let prior = unit_prior();
        let mut rng = RngStream::new(9, 0);
        let mut mins = [f64::INFINITY; 2];
        let mut maxs = [f64::NEG_INFINITY; 2];
        for _ in 0..10_000 {
            let p = prior.sample(&mut rng);
            for (d, &v) in p.values().iter().enumerate() {
                assert!((0.5..1.5).contains(&v));
                mins[d] = mins[d].min(v);
                maxs[d] = maxs[d].max(v);
            }
        }
        for d in 0..2 {
            assert!(mins[d] < 0.52, "dim {d} min {}", mins[d]);
            assert!(maxs[d] > 1.48, "dim {d} max {}", maxs[d]);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let prior = unit_prior();
        let a = prior.sample(&mut RngStream::new(4, 2));
        let b = prior.sample(&mut RngStream::new(4, 2));
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn prefix_takes_leading_dims() {
        let prior = PriorSpec::new(vec![
            ("beta".into(), 0.1, 0.5),
            ("gamma".into(), 0.05, 0.2),
            ("sigma_e".into(), 0.1, 0.3),
        ])
        .unwrap();
        let sir = prior.prefix(2).unwrap();
        assert_eq!(sir.names(), ["beta".to_string(), "gamma".to_string()]);
        assert!(prior.prefix(4).is_err());
    }

    #[test]
    fn midpoint_is_box_centre() {
        let prior = unit_prior();
        assert_eq!(prior.midpoint().values(), &[1.0, 1.0]);
    }
}
