use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glimpse::retina::{Location, RetinaConfig};
use crate::kernel::{relu_bwd, relu_fwd, Linear, ParamSlot, Rng};

/// Sizes of the glimpse network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlimpseConfig {
    pub retina: RetinaConfig,
    /// Width of both the "what" and the "where" branch.
    pub branch_dim: usize,
    /// Width of the glimpse vector.
    pub glimpse_dim: usize,
}

impl GlimpseConfig {
    pub fn for_frame(height: usize, width: usize) -> Self {
        GlimpseConfig {
            retina: RetinaConfig::default_for(height, width),
            branch_dim: 128,
            glimpse_dim: 220,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.retina.validate()?;
        if self.branch_dim == 0 || self.glimpse_dim == 0 {
            return Err(Error::Config("glimpse layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// `g = relu(out(what(ρ) + where(l)))`.
#[derive(Debug, Clone)]
pub struct GlimpseNet {
    pub what: Linear,
    pub where_: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct GlimpseCache {
    location: [f64; 2],
    sum: Vec<f64>,
    pre: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GlimpseGrads {
    pub patch: Vec<f64>,
    pub location: [f64; 2],
}

impl GlimpseNet {
    pub fn new(name: &str, cfg: &GlimpseConfig, rng: &mut Rng) -> Self {
        GlimpseNet {
            what: Linear::new(&format!("{name}.what"), cfg.retina.patch_len(), cfg.branch_dim, rng),
            where_: Linear::new(&format!("{name}.where"), 2, cfg.branch_dim, rng),
            out: Linear::new(&format!("{name}.out"), cfg.branch_dim, cfg.glimpse_dim, rng),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.what.n_in()
    }

    pub fn output_dim(&self) -> usize {
        self.out.n_out()
    }

    pub fn forward(&self, patch: &[f64], l: Location) -> Result<(Vec<f64>, GlimpseCache)> {
        l.check()?;
        let location = l.to_array();
        let mut sum = self.what.forward(patch)?;
        for (s, v) in sum.iter_mut().zip(self.where_.forward(&location)?) {
            *s += v;
        }
        let pre = self.out.forward(&sum)?;
        let g = relu_fwd(&pre);
        let cache = GlimpseCache {
            location,
            sum,
            pre,
        };
        Ok((g, cache))
    }

    /// `patch` is the retina the forward pass consumed; it is not cached
    /// because it is cheap to re-extract and large to keep per step.
    pub fn backward(
        &mut self,
        cache: &GlimpseCache,
        patch: &[f64],
        grad_g: &[f64],
    ) -> Result<GlimpseGrads> {
        if grad_g.len() != cache.pre.len() {
            return Err(Error::Dimension(format!(
                "glimpse gradient has {} values, output has {}",
                grad_g.len(),
                cache.pre.len()
            )));
        }
        let d_pre = relu_bwd(grad_g, &cache.pre);
        let d_sum = self.out.backward(&cache.sum, &d_pre)?;
        let patch = self.what.backward(patch, &d_sum)?;
        let d_loc = self.where_.backward(&cache.location, &d_sum)?;
        Ok(GlimpseGrads {
            patch,
            location: [d_loc[0], d_loc[1]],
        })
    }

    pub fn params(&self) -> Vec<&ParamSlot> {
        [self.what.params(), self.where_.params(), self.out.params()].concat()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamSlot> {
        let mut v = Vec::with_capacity(6);
        v.extend(self.what.params_mut());
        v.extend(self.where_.params_mut());
        v.extend(self.out.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GlimpseConfig {
        GlimpseConfig {
            retina: RetinaConfig {
                height: 2,
                width: 2,
                scales: 2,
                scale_factor: 2,
            },
            branch_dim: 5,
            glimpse_dim: 4,
        }
    }

    #[test]
    fn zero_weights_leave_bias_path() {
        let mut rng = Rng::new(1);
        let mut net = GlimpseNet::new("g", &small(), &mut rng);
        for p in net.params_mut() {
            p.value.fill(0.0);
        }
        net.out.bias.value.data_mut().copy_from_slice(&[1.0, -2.0, 0.5, 0.0]);
        let patch = vec![3.0; 8];
        let (a, _) = net.forward(&patch, Location::new(0.4, -0.9).unwrap()).unwrap();
        let (b, _) = net.forward(&patch, Location::new(-1.0, 1.0).unwrap()).unwrap();
        assert_eq!(a, vec![1.0, 0.0, 0.5, 0.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn where_pathway_is_live() {
        let mut rng = Rng::new(2);
        let net = GlimpseNet::new("g", &small(), &mut rng);
        let patch = vec![0.7; 8];
        let (a, _) = net.forward(&patch, Location::new(0.4, -0.9).unwrap()).unwrap();
        let (b, _) = net.forward(&patch, Location::new(-0.4, 0.9).unwrap()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn stateless() {
        let mut rng = Rng::new(3);
        let net = GlimpseNet::new("g", &small(), &mut rng);
        let p1: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let p2: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let l = Location::new(0.1, 0.2).unwrap();
        let first = net.forward(&p1, l).unwrap().0;
        net.forward(&p2, l).unwrap();
        assert_eq!(net.forward(&p1, l).unwrap().0, first);
    }
}
