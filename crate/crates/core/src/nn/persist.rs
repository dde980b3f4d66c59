//! Model files.
//!
//! ```text
//! TFQNN1\n
//! {"version":1,"margin":1.0,"input":[1,64,64],"layers":[{"kind":"conv",...,"params":[[32,1,5,5],[32]]},...]}\n
//! <every parameter tensor as little-endian f64, in descriptor order>
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, LayerSpec, Network, SiameseModel};
use super::tensor::Tensor;
use super::NnError;

const MAGIC_PREFIX: &[u8] = b"TFQNN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    version: u32,
    margin: f64,
    input: [usize; 3],
    layers: Vec<DescribedLayer>,
}

#[derive(Serialize, Deserialize)]
struct DescribedLayer {
    #[serde(flatten)]
    spec: LayerSpec,
    params: Vec<Vec<usize>>,
}

pub fn model_to_bytes(model: &SiameseModel) -> Vec<u8> {
    let arch = model.core().architecture();
    let desc = Descriptor {
        version: VERSION,
        margin: model.margin(),
        input: arch.input,
        layers: arch
            .layers
            .iter()
            .map(|&spec| DescribedLayer {
                spec,
                params: spec.param_shapes(),
            })
            .collect(),
    };
    let header = serde_json::to_string(&desc).expect("descriptor serializes");
    let n: usize = model.core().params().iter().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(header.len() + 8 + n * 8);
    out.extend_from_slice(MAGIC_PREFIX);
    out.extend_from_slice(format!("{VERSION}\n").as_bytes());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for p in model.core().params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<SiameseModel, NnError> {
    let (magic, rest) = split_line(bytes).ok_or_else(|| NnError::Format("missing magic line".into()))?;
    let version = magic
        .strip_prefix(MAGIC_PREFIX)
        .and_then(|v| std::str::from_utf8(v).ok())
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| NnError::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))))?;
    if version != VERSION {
        return Err(NnError::Version(version));
    }
    let (header, payload) =
        split_line(rest).ok_or_else(|| NnError::Format("missing architecture descriptor".into()))?;
    let desc: Descriptor = serde_json::from_slice(header)
        .map_err(|e| NnError::Format(format!("architecture descriptor: {e}")))?;
    if desc.version != VERSION {
        return Err(NnError::Version(desc.version));
    }
    for (i, layer) in desc.layers.iter().enumerate() {
        if layer.params != layer.spec.param_shapes() {
            return Err(NnError::Format(format!(
                "layer {i} declares parameter shapes {:?}, its kind implies {:?}",
                layer.params,
                layer.spec.param_shapes()
            )));
        }
    }
    let arch = Architecture {
        input: desc.input,
        layers: desc.layers.iter().map(|l| l.spec).collect(),
    };
    let shapes = arch.param_shapes();
    let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>() * 8;
    if payload.len() != expected {
        return Err(NnError::Format(format!(
            "weight payload is {} bytes, descriptor needs {expected}",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut params = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        let n = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        params.push(Tensor::from_vec(shape, data).map_err(|e| NnError::Format(e.to_string()))?);
    }
    let core = Network::from_params(arch, params).map_err(|e| NnError::Format(e.to_string()))?;
    SiameseModel::new(core, desc.margin).map_err(|e| NnError::Format(e.to_string()))
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..nl], &bytes[nl + 1..]))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_model(model: &SiameseModel, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp-write");
    let result = (|| {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(&model_to_bytes(model))?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        NnError::io(path, e)
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SiameseModel, NnError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| NnError::io(path, e))?;
    model_from_bytes(&bytes)
}
