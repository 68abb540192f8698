//! Checkpoint format.
//!
//! A UTF-8 header of newline-terminated records, terminated by the line
//! `end`, followed immediately by every parameter as a little-endian IEEE-754
//! binary64 in declaration order (layer order; weight before bias).
//!
//! ```text
//! nnkit-checkpoint 1
//! seed 42
//! input 6 64 64
//! optimizer adam lr=0.001 beta1=0.9 beta2=0.999 eps=1e-8
//! meta role stage1-encoder
//! layer conv2d 6 16 3 2 1        # in out kernel stride padding
//! layer relu
//! layer flatten
//! layer dense 4096 64            # in out
//! layer upsample-nearest 2       # factor
//! layer reshape 64 8 8
//! layer sigmoid
//! params 123456
//! end
//! <params * 8 bytes>
//! ```
//!
//! `optimizer` may also be `optimizer none`. `meta` lines are free-form
//! key/value pairs (value runs to end of line). Reals in the header use
//! Rust's shortest round-trip formatting.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::adam::AdamConfig;
use crate::layer::{Conv2d, Dense, Layer};
use crate::network::Network;
use crate::{NnError, Result};

const MAGIC: &str = "nnkit-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub optimizer: Option<AdamConfig>,
    pub meta: Vec<(String, String)>,
}

impl CheckpointMeta {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn dims(v: &[usize]) -> String {
    v.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_to(net: &Network, meta: &CheckpointMeta, w: &mut impl Write) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("seed {}\n", net.seed()));
    header.push_str(&format!("input {}\n", dims(net.input_shape())));
    match &meta.optimizer {
        Some(a) => header.push_str(&format!(
            "optimizer adam lr={:?} beta1={:?} beta2={:?} eps={:?}\n",
            a.learning_rate, a.beta1, a.beta2, a.epsilon
        )),
        None => header.push_str("optimizer none\n"),
    }
    for (k, v) in &meta.meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(NnError::Checkpoint(format!("invalid meta entry {k:?}")));
        }
        header.push_str(&format!("meta {k} {v}\n"));
    }
    for layer in net.layers() {
        let line = match layer {
            Layer::Dense(d) => format!("layer dense {} {}", d.inputs, d.outputs),
            Layer::Conv2d(c) => format!(
                "layer conv2d {} {} {} {} {}",
                c.in_channels, c.out_channels, c.kernel, c.stride, c.padding
            ),
            Layer::UpsampleNearest { factor } => format!("layer upsample-nearest {factor}"),
            Layer::Relu => "layer relu".into(),
            Layer::Sigmoid => "layer sigmoid".into(),
            Layer::Flatten => "layer flatten".into(),
            Layer::Reshape(s) => format!("layer reshape {}", dims(s)),
        };
        header.push_str(&line);
        header.push('\n');
    }
    header.push_str(&format!("params {}\nend\n", net.param_count()));
    w.write_all(header.as_bytes())?;
    let mut blob = Vec::with_capacity(net.param_count() * 8);
    for p in net.params() {
        for v in p {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&blob)?;
    Ok(())
}

pub fn save(net: &Network, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_to(net, meta, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn parse_usizes(it: std::str::SplitWhitespace<'_>, line: &str) -> Result<Vec<usize>> {
    it.map(|t| {
        t.parse::<usize>()
            .map_err(|_| NnError::Checkpoint(format!("bad integer in {line:?}")))
    })
    .collect()
}

fn parse_kv(tok: Option<&str>, key: &str, line: &str) -> Result<f64> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| NnError::Checkpoint(format!("expected {key}=<real> in {line:?}")))
}

pub fn read_from(r: &mut impl Read) -> Result<(Network, CheckpointMeta)> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<_>| -> Result<String> {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            return Err(NnError::Checkpoint("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next_line(&mut reader)? != MAGIC {
        return Err(NnError::Checkpoint("missing magic line".into()));
    }
    let mut seed = None;
    let mut input = None;
    let mut meta = CheckpointMeta::default();
    let mut layers = Vec::new();
    let mut count = None;
    loop {
        let l = next_line(&mut reader)?;
        if l == "end" {
            break;
        }
        let mut it = l.split_whitespace();
        match it.next() {
            Some("seed") => {
                seed = Some(
                    it.next()
                        .and_then(|t| t.parse::<u64>().ok())
                        .ok_or_else(|| NnError::Checkpoint(format!("bad seed line {l:?}")))?,
                )
            }
            Some("input") => input = Some(parse_usizes(it, &l)?),
            Some("optimizer") => match it.next() {
                Some("none") => meta.optimizer = None,
                Some("adam") => {
                    meta.optimizer = Some(AdamConfig {
                        learning_rate: parse_kv(it.next(), "lr", &l)?,
                        beta1: parse_kv(it.next(), "beta1", &l)?,
                        beta2: parse_kv(it.next(), "beta2", &l)?,
                        epsilon: parse_kv(it.next(), "eps", &l)?,
                    })
                }
                _ => return Err(NnError::Checkpoint(format!("unknown optimizer in {l:?}"))),
            },
            Some("meta") => {
                let rest = l["meta".len()..].trim_start();
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.meta.push((k.to_string(), v.to_string()));
            }
            Some("layer") => {
                let kind = it.next().unwrap_or("");
                let nums = parse_usizes(it, &l)?;
                let want = |n: usize| -> Result<()> {
                    if nums.len() == n {
                        Ok(())
                    } else {
                        Err(NnError::Checkpoint(format!("wrong arity in {l:?}")))
                    }
                };
                let layer = match kind {
                    "dense" => {
                        want(2)?;
                        Layer::Dense(Dense::new(
                            nums[0],
                            nums[1],
                            vec![0.0; nums[0] * nums[1]],
                            vec![0.0; nums[1]],
                        ))
                    }
                    "conv2d" => {
                        want(5)?;
                        Layer::Conv2d(Conv2d {
                            in_channels: nums[0],
                            out_channels: nums[1],
                            kernel: nums[2],
                            stride: nums[3],
                            padding: nums[4],
                            weight: vec![0.0; nums[1] * nums[0] * nums[2] * nums[2]],
                            bias: vec![0.0; nums[1]],
                        })
                    }
                    "upsample-nearest" => {
                        want(1)?;
                        Layer::UpsampleNearest { factor: nums[0] }
                    }
                    "relu" => Layer::Relu,
                    "sigmoid" => Layer::Sigmoid,
                    "flatten" => Layer::Flatten,
                    "reshape" => Layer::Reshape(nums),
                    other => {
                        return Err(NnError::Checkpoint(format!("unknown layer kind {other:?}")))
                    }
                };
                layers.push(layer);
            }
            Some("params") => {
                count = Some(
                    it.next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| NnError::Checkpoint(format!("bad params line {l:?}")))?,
                )
            }
            _ => {
                return Err(NnError::Checkpoint(format!(
                    "unrecognised header line {l:?}"
                )))
            }
        }
    }
    let input = input.ok_or_else(|| NnError::Checkpoint("missing input line".into()))?;
    let seed = seed.ok_or_else(|| NnError::Checkpoint("missing seed line".into()))?;
    let count = count.ok_or_else(|| NnError::Checkpoint("missing params line".into()))?;
    let mut net = Network::from_layers(input, layers, seed)?;
    if net.param_count() != count {
        return Err(NnError::Checkpoint(format!(
            "header declares {count} parameters, layers need {}",
            net.param_count()
        )));
    }
    let mut blob = Vec::with_capacity(count * 8);
    reader.read_to_end(&mut blob)?;
    if blob.len() != count * 8 {
        return Err(NnError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            count * 8,
            blob.len()
        )));
    }
    let mut chunks = blob.chunks_exact(8);
    for p in net.params_mut() {
        for v in p.iter_mut() {
            let bytes: [u8; 8] = chunks.next().unwrap().try_into().unwrap();
            *v = f64::from_le_bytes(bytes);
            if !v.is_finite() {
                return Err(NnError::Checkpoint("non-finite parameter".into()));
            }
        }
    }
    Ok((net, meta))
}

pub fn load(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let mut f = std::fs::File::open(path)?;
    read_from(&mut f).map_err(|e| match e {
        NnError::Checkpoint(m) => NnError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkBuilder;
    use crate::tensor::Tensor;

    fn conv_net() -> Network {
        NetworkBuilder::new(vec![2, 8, 8])
            .conv2d(3, 3, 2, 1)
            .relu()
            .flatten()
            .dense(5)
            .dense(48)
            .reshape(vec![3, 4, 4])
            .upsample(2)
            .conv2d(2, 3, 1, 1)
            .sigmoid()
            .build(99)
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = conv_net();
        let meta = CheckpointMeta {
            optimizer: Some(AdamConfig::default()),
            meta: vec![("role".into(), "test net".into())],
        };
        let mut buf = Vec::new();
        write_to(&net, &meta, &mut buf).unwrap();
        let (back, m2) = read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert_eq!(m2, meta);
        assert_eq!(back.seed(), 99);
        let x = Tensor::new(
            vec![1, 2, 8, 8],
            (0..128).map(|i| i as f64 / 128.0).collect(),
        )
        .unwrap();
        assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
        let mut again = Vec::new();
        write_to(&back, &m2, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncated_blob_rejected() {
        let net = conv_net();
        let mut buf = Vec::new();
        write_to(&net, &CheckpointMeta::default(), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_from(&mut buf.as_slice()),
            Err(NnError::Checkpoint(_))
        ));
    }

    #[test]
    fn header_mentions_layers_in_order() {
        let mut buf = Vec::new();
        write_to(&conv_net(), &CheckpointMeta::default(), &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf);
        let a = text.find("layer conv2d 2 3 3 2 1").unwrap();
        let b = text.find("layer dense 48 5").unwrap();
        let c = text.find("layer dense 5 48").unwrap();
        assert!(a < b && b < c);
    }
}
