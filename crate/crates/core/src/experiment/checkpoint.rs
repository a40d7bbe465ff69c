use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ExperimentError, Result};
use crate::networks::{Architecture, NetworkBundle, COMPONENTS};
use crate::scalar::{Precision, Scalar};
use crate::tensor::{ParameterSet, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "checkpoint.manifest";
const PAYLOAD: &str = "checkpoint.bin";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io(format!("{}: {e}", path.display()))
}

fn bad(msg: String) -> ExperimentError {
    ExperimentError::Checkpoint(msg)
}

fn components<T: Scalar>(bundle: &NetworkBundle<T>) -> Vec<(&'static str, &ParameterSet<T>)> {
    COMPONENTS
        .iter()
        .filter_map(|&name| bundle.component(name).map(|p| (name, p)))
        .collect()
}

/// Writes `checkpoint.manifest` and `checkpoint.bin` (little-endian, in the
/// bundle's precision, parameters in manifest order) into `dir`.
pub fn save_checkpoint<T: Scalar>(dir: &Path, bundle: &NetworkBundle<T>, step: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let arch = serde_json::to_string(&bundle.arch).expect("architecture serializes");
    let mut manifest = format!(
        "version {CHECKPOINT_VERSION}\nprecision {}\nstep {step}\nallocator {}\narchitecture {arch}\n",
        T::PRECISION.as_str(),
        bundle.allocator.is_some()
    );
    let mut payload = Vec::new();
    for (component, params) in components(bundle) {
        for (name, t) in params.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            manifest += &format!("param {component}/{name} {}\n", dims.join(" "));
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
    }
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(io(&mpath))?;
    let ppath = dir.join(PAYLOAD);
    fs::write(&ppath, payload).map_err(io(&ppath))?;
    Ok(())
}

/// A restored bundle and the number of completed steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub bundle: NetworkBundle<T>,
    pub step: usize,
}

/// Loads a checkpoint. Parameter shapes are checked against the
/// architecture in the manifest, or against `expected` when given.
pub fn load_checkpoint<T: Scalar>(dir: &Path, expected: Option<&Architecture>) -> Result<Checkpoint<T>> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io(&mpath))?;
    let mut header = std::collections::HashMap::new();
    let mut params: Vec<(String, Vec<usize>)> = Vec::new();
    for line in text.lines() {
        let (key, value) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
        if key == "param" {
            let mut parts = value.split_whitespace();
            let name = parts.next().ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            let shape = parts
                .map(|d| d.parse().map_err(|_| bad(format!("bad dimension in {line:?}"))))
                .collect::<Result<Vec<usize>>>()?;
            params.push((name.to_string(), shape));
        } else {
            header.insert(key, value);
        }
    }
    let get = |k: &str| header.get(k).copied().ok_or_else(|| bad(format!("manifest lacks {k}")));
    let version: u32 = get("version")?.parse().map_err(|_| bad("bad version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("version {version}, this build reads {CHECKPOINT_VERSION}")));
    }
    let precision = Precision::parse(get("precision")?).ok_or_else(|| bad("unknown precision".into()))?;
    if precision != T::PRECISION {
        return Err(bad(format!(
            "checkpoint stores {}, caller expects {}",
            precision.as_str(),
            T::PRECISION.as_str()
        )));
    }
    let step: usize = get("step")?.parse().map_err(|_| bad("bad step".into()))?;
    let with_allocator: bool = get("allocator")?.parse().map_err(|_| bad("bad allocator flag".into()))?;
    let stored: Architecture =
        serde_json::from_str(get("architecture")?).map_err(|e| bad(format!("architecture: {e}")))?;
    let arch = expected.cloned().unwrap_or(stored);
    let mut bundle = NetworkBundle::<T>::init(&arch, with_allocator, &mut ChaCha8Rng::seed_from_u64(0))?;

    let ppath = dir.join(PAYLOAD);
    let bytes = fs::read(&ppath).map_err(io(&ppath))?;
    let width = precision.byte_width();
    let declared: usize = params.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if bytes.len() != declared * width {
        return Err(bad(format!(
            "payload has {} bytes, manifest declares {declared} values of {width} bytes",
            bytes.len()
        )));
    }
    let expected_count: usize = components(&bundle).iter().map(|(_, p)| p.len()).sum();
    if params.len() != expected_count {
        return Err(bad(format!("manifest lists {} parameters, expected {expected_count}", params.len())));
    }
    let mut offset = 0;
    for (full, shape) in params {
        let (component, name) = full.split_once('/').ok_or_else(|| bad(format!("bad parameter name {full}")))?;
        let set = bundle
            .component_mut(component)
            .ok_or_else(|| bad(format!("unknown component in {full}")))?;
        let want = set
            .get(name)
            .ok_or_else(|| bad(format!("unexpected parameter {full}")))?
            .shape()
            .to_vec();
        if want != shape {
            return Err(ExperimentError::ShapeMismatch {
                param: full.clone(),
                stored: shape,
                expected: want,
            });
        }
        let n: usize = shape.iter().product();
        let data = bytes[offset..offset + n * width].chunks_exact(width).map(T::read_le).collect();
        offset += n * width;
        set.set(name, Tensor::new(shape, data)?)?;
    }
    Ok(Checkpoint { bundle, step })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> Architecture {
        Architecture {
            in_channels: 3,
            window_len: 16,
            n_classes: 6,
            conv_filters: vec![4, 5, 3],
            disc_hidden: vec![6, 6],
            ..Architecture::default()
        }
    }

    fn bundle<T: Scalar>() -> NetworkBundle<T> {
        NetworkBundle::init(&arch(), true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_in_both_precisions() {
        let dir = tempfile::tempdir().unwrap();
        let b32 = bundle::<f32>();
        save_checkpoint(dir.path(), &b32, 17).unwrap();
        let back = load_checkpoint::<f32>(dir.path(), None).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.bundle, b32);
        let b64 = bundle::<f64>();
        save_checkpoint(dir.path(), &b64, 3).unwrap();
        assert_eq!(load_checkpoint::<f64>(dir.path(), None).unwrap().bundle, b64);
        assert!(load_checkpoint::<f32>(dir.path(), None).is_err());
    }

    #[test]
    fn edited_shape_is_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &bundle::<f32>(), 0).unwrap();
        let m = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&m).unwrap();
        fs::write(&m, text.replace("param classifier/dense.weight 6 3", "param classifier/dense.weight 3 6")).unwrap();
        let err = load_checkpoint::<f32>(dir.path(), None).unwrap_err();
        assert!(matches!(err, ExperimentError::ShapeMismatch { ref param, .. } if param == "classifier/dense.weight"));
    }

    #[test]
    fn wrong_class_count_names_the_parameter() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &bundle::<f32>(), 0).unwrap();
        let five = Architecture { n_classes: 5, ..arch() };
        let err = load_checkpoint::<f32>(dir.path(), Some(&five)).unwrap_err();
        assert!(err.to_string().contains("classifier/dense.weight"), "{err}");
    }

    #[test]
    fn truncated_payload_and_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &bundle::<f32>(), 0).unwrap();
        let p = dir.path().join(PAYLOAD);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(load_checkpoint::<f32>(dir.path(), None).is_err());
        fs::write(&p, &bytes).unwrap();
        let m = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&m).unwrap();
        fs::write(&m, text.replacen("version 1", "version 2", 1)).unwrap();
        assert!(matches!(load_checkpoint::<f32>(dir.path(), None), Err(ExperimentError::Checkpoint(_))));
    }
}
