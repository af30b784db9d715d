use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON checkpoint: a [`NetworkSpec`] header plus named weight and bias tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_net(net: &Mlp) -> Self {
        let mut tensors = Vec::new();
        let mut off = 0;
        let p = net.params();
        for (l, (i, o)) in net.spec().layer_dims().into_iter().enumerate() {
            tensors.push(Tensor {
                name: format!("layer{l}.weight"),
                shape: vec![i, o],
                data: p[off..off + i * o].to_vec(),
            });
            off += i * o;
            tensors.push(Tensor {
                name: format!("layer{l}.bias"),
                shape: vec![o],
                data: p[off..off + o].to_vec(),
            });
            off += o;
        }
        Self {
            spec: net.spec().clone(),
            tensors,
        }
    }

    pub fn into_net(self) -> Result<Mlp> {
        let dims = self.spec.layer_dims();
        if self.tensors.len() != 2 * dims.len() {
            return Err(Error::dim("checkpoint tensors", 2 * dims.len(), self.tensors.len()));
        }
        let mut params = Vec::with_capacity(self.spec.n_params());
        for (l, (i, o)) in dims.into_iter().enumerate() {
            for (t, (name, shape)) in self.tensors[2 * l..2 * l + 2].iter().zip([
                (format!("layer{l}.weight"), vec![i, o]),
                (format!("layer{l}.bias"), vec![o]),
            ]) {
                if t.name != name {
                    return Err(Error::Config(format!(
                        "checkpoint tensor '{}' where '{name}' was expected",
                        t.name
                    )));
                }
                if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                    return Err(Error::Config(format!(
                        "checkpoint tensor '{name}' has shape {:?} with {} values, expected {shape:?}",
                        t.shape,
                        t.data.len()
                    )));
                }
                params.extend_from_slice(&t.data);
            }
        }
        Mlp::from_params(self.spec, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand::SeedableRng;

    #[test]
    fn round_trip_preserves_outputs() {
        let net = Mlp::new(NetworkSpec::gaussian(3, &[5, 4], 2), &mut Rng::seed_from_u64(1)).unwrap();
        let ck = Checkpoint::from_net(&net);
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let net2 = back.into_net().unwrap();
        assert_eq!(net, net2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = Mlp::new(NetworkSpec::gaussian(3, &[5], 1), &mut Rng::seed_from_u64(1)).unwrap();
        let mut ck = Checkpoint::from_net(&net);
        ck.tensors[0].shape = vec![5, 3];
        assert!(ck.clone().into_net().is_err());
        ck.tensors.pop();
        assert!(ck.into_net().is_err());
    }
}
