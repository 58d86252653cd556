//! Sites × years matrices of block maxima.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::basis::Point;
use crate::error::{Error, Result};

/// One observation site with coordinates and covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub id: String,
    pub location: Point,
    pub covariates: Vec<f64>,
}

/// Complete block-maxima table. `values` is site-major: `values[i * T + t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sites: Vec<Site>,
    pub years: Vec<i64>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(sites: Vec<Site>, years: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        let d = Dataset { sites, years, values };
        d.validate()?;
        Ok(d)
    }

    /// Build from a simulation laid out `years × sites`.
    pub fn from_year_major(sites: Vec<Site>, years: Vec<i64>, by_year: &[f64]) -> Result<Self> {
        let (n, t) = (sites.len(), years.len());
        if by_year.len() != n * t {
            return Err(Error::Input(alloc::format!("expected {} values, got {}", n * t, by_year.len())));
        }
        let mut values = Vec::with_capacity(n * t);
        for i in 0..n {
            for k in 0..t {
                values.push(by_year[k * n + i]);
            }
        }
        Dataset::new(sites, years, values)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites.is_empty() || self.years.is_empty() {
            return Err(Error::Input("dataset has no sites or no years".into()));
        }
        if self.values.len() != self.sites.len() * self.years.len() {
            return Err(Error::Input("value matrix does not match sites × years".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.sites {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Input(alloc::format!("duplicate site id {}", s.id)));
            }
            if !s.location.x.is_finite() || !s.location.y.is_finite() {
                return Err(Error::Input(alloc::format!("site {} has non-finite coordinates", s.id)));
            }
            if s.covariates.iter().any(|c| !c.is_finite()) {
                return Err(Error::Input(alloc::format!("site {} has non-finite covariates", s.id)));
            }
        }
        let p = self.sites[0].covariates.len();
        if self.sites.iter().any(|s| s.covariates.len() != p) {
            return Err(Error::Input("sites have different numbers of covariates".into()));
        }
        let mut ys = BTreeSet::new();
        for &y in &self.years {
            if y < 0 {
                return Err(Error::Input(alloc::format!("negative year {y}")));
            }
            if !ys.insert(y) {
                return Err(Error::Input(alloc::format!("duplicate year {y}")));
            }
        }
        for (k, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                let (i, t) = (k / self.years.len(), k % self.years.len());
                return Err(Error::Input(alloc::format!(
                    "non-finite value at site {} year {}",
                    self.sites[i].id,
                    self.years[t]
                )));
            }
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.sites[0].covariates.len()
    }

    #[inline]
    pub fn value(&self, i: usize, t: usize) -> f64 {
        self.values[i * self.years.len() + t]
    }

    /// The series at site i, ordered as `years`.
    pub fn series(&self, i: usize) -> &[f64] {
        let t = self.years.len();
        &self.values[i * t..(i + 1) * t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn locations(&self) -> Vec<Point> {
        self.sites.iter().map(|s| s.location).collect()
    }

    /// Keep only the listed sites, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut sites = Vec::with_capacity(idx.len());
        let mut values = Vec::with_capacity(idx.len() * self.n_years());
        for &i in idx {
            let s = self.sites.get(i).ok_or_else(|| Error::Input(alloc::format!("no site {i}")))?;
            sites.push(s.clone());
            values.extend_from_slice(self.series(i));
        }
        Dataset::new(sites, self.years.clone(), values)
    }
}

/// Sites with no covariates and ids `s0, s1, …`.
pub fn plain_sites(points: &[Point]) -> Vec<Site> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| Site { id: alloc::format!("s{i}"), location: p, covariates: Vec::new() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sites(n: usize) -> Vec<Site> {
        plain_sites(&(0..n).map(|i| Point::new(i as f64, 0.0)).collect::<Vec<_>>())
    }

    #[test]
    fn layout_and_accessors() {
        let d = Dataset::from_year_major(sites(2), vec![2000, 2001, 2002], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(d.series(0), &[1.0, 3.0, 5.0]);
        assert_eq!(d.series(1), &[2.0, 4.0, 6.0]);
        assert_eq!(d.value(1, 2), 6.0);
        let s = d.subset(&[1]).unwrap();
        assert_eq!(s.series(0), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Dataset::new(sites(2), vec![1, 2], vec![0.0; 3]).is_err());
        assert!(Dataset::new(sites(1), vec![1, 2], vec![0.0, f64::NAN]).is_err());
        assert!(Dataset::new(sites(1), vec![-1], vec![0.0]).is_err());
        assert!(Dataset::new(sites(1), vec![3, 3], vec![0.0, 1.0]).is_err());
        let mut dup = sites(2);
        dup[1].id = dup[0].id.clone();
        assert!(Dataset::new(dup, vec![1], vec![0.0, 1.0]).is_err());
    }
}
