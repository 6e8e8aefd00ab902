//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "KCW1" | version: u32 | record count: u32 |
//!   { name length: u16 | name: UTF-8 | rank: u8 | dims: u32 × rank | values: f32 × Π dims }*
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::nn::{Layer, Network, Real, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"KCW1";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn write_records<W: Write>(out: &mut W, records: &[WeightRecord]) -> Result<()> {
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        let name = r.name.as_bytes();
        let Ok(len) = u16::try_from(name.len()) else {
            bail!(InvalidArgument, "weight name too long: {}", r.name);
        };
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&[r.tensor.rank() as u8])?;
        for &d in r.tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in r.tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("weight file truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_records<R: Read>(input: &mut R) -> Result<Vec<WeightRecord>> {
    let mut magic = [0u8; 4];
    read_exact(input, &mut magic, "magic")?;
    if &magic != WEIGHTS_MAGIC {
        bail!(Format, "bad weight file magic {magic:?}");
    }
    let version = read_u32(input, "version")?;
    if version != WEIGHTS_VERSION {
        bail!(Format, "unsupported weight file version {version}");
    }
    let count = read_u32(input, "record count")?;
    let mut records = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(input, &mut b2, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact(input, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("weight name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        read_exact(input, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(input, "dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 4];
        read_exact(input, &mut raw, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        records.push(WeightRecord { name, tensor });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        bail!(Format, "trailing bytes after {count} weight records");
    }
    Ok(records)
}

/// Every persisted tensor of `net` in a fixed order: trainable parameters
/// plus batch-norm running statistics.
pub fn network_records<T: Real>(net: &Network<T>) -> Vec<WeightRecord> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        for (pname, p) in layer.params() {
            out.push(WeightRecord {
                name: format!("{i}.{}.{pname}", layer.kind()),
                tensor: p.value.cast(),
            });
        }
        if let Layer::BatchNorm(bn) = layer {
            out.push(WeightRecord {
                name: format!("{i}.batchnorm.running_mean"),
                tensor: bn.stats.mean.cast(),
            });
            out.push(WeightRecord {
                name: format!("{i}.batchnorm.running_var"),
                tensor: bn.stats.var.cast(),
            });
        }
    }
    out
}

pub fn save_weights<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_records(&mut buf, &network_records(net))?;
    fs::write(path, buf)?;
    Ok(())
}

/// Replaces every persisted tensor of `net` with the contents of `records`.
/// Names and shapes must match exactly; on error `net` is left untouched.
pub fn apply_records<T: Real>(net: &mut Network<T>, records: &[WeightRecord]) -> Result<()> {
    let expected = network_records(net);
    if expected.len() != records.len() {
        bail!(
            Format,
            "weight file holds {} tensors, network needs {}",
            records.len(),
            expected.len()
        );
    }
    for (e, r) in expected.iter().zip(records) {
        if e.name != r.name {
            bail!(Format, "expected weight {}, found {}", e.name, r.name);
        }
        if e.tensor.shape() != r.tensor.shape() {
            bail!(
                Format,
                "{}: stored shape {:?}, network expects {:?}",
                r.name,
                r.tensor.shape(),
                e.tensor.shape()
            );
        }
    }

    let mut it = records.iter().map(|r| r.tensor.cast::<T>());
    for layer in net.layers_mut() {
        for p in layer.params_mut() {
            p.value = it.next().expect("record count verified");
        }
        if let Layer::BatchNorm(bn) = layer {
            bn.stats.mean = it.next().expect("record count verified");
            bn.stats.var = it.next().expect("record count verified");
            bn.stats.tracked = true;
        }
    }
    Ok(())
}

pub fn load_weights<T: Real>(net: &mut Network<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = fs::read(path)?;
    let records = read_records(&mut bytes.as_slice())?;
    apply_records(net, &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64) -> Network<f32> {
        let mut n = Network::new(
            &[5, 5, 1],
            vec![
                Layer::conv(3, 1, 2),
                Layer::batch_norm(2),
                Layer::relu(),
                Layer::dense(18, 1),
                Layer::sigmoid(),
            ],
        )
        .unwrap();
        n.initialize(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        n
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.kcw");
        let mut a = net(1);
        let x = Tensor::from_fn(&[4, 5, 5, 1], |i| (i as f32 * 0.3).sin());
        a.forward_train(&x).unwrap();
        save_weights(&a, &path).unwrap();

        let mut b = net(2);
        load_weights(&mut b, &path).unwrap();
        assert_eq!(network_records(&a), network_records(&b));
        assert_eq!(a.infer(&x).unwrap(), b.infer(&x).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected_without_partial_load() {
        let a = net(1);
        let mut buf = Vec::new();
        write_records(&mut buf, &network_records(&a)).unwrap();
        let mut b = net(2);
        let before = network_records(&b);
        for cut in [3, 10, buf.len() / 2, buf.len() - 1] {
            let r = read_records(&mut &buf[..cut]);
            assert!(r.is_err(), "cut at {cut}");
        }
        assert!(read_records(&mut &buf[..]).is_ok());
        assert_eq!(network_records(&b), before);
        // A structurally valid file for a different network is rejected too.
        let other = Network::<f32>::new(&[2], vec![Layer::dense(2, 1)]).unwrap();
        let mut buf2 = Vec::new();
        write_records(&mut buf2, &network_records(&other)).unwrap();
        let recs = read_records(&mut &buf2[..]).unwrap();
        assert!(apply_records(&mut b, &recs).is_err());
        assert_eq!(network_records(&b), before);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_records(&mut &bad[..]).unwrap_err().to_string().contains("magic"));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_records(&mut &bad[..]).unwrap_err().to_string().contains("version"));
    }

    proptest! {
        #[test]
        fn arbitrary_records_round_trip(
            dims in proptest::collection::vec(1usize..4, 1..4),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::from_fn(&dims, |_| f32::from_bits(rand::Rng::gen::<u32>(&mut rng) & 0x7f7f_ffff));
            let recs = vec![WeightRecord { name: "x.y".into(), tensor: t }];
            let mut buf = Vec::new();
            write_records(&mut buf, &recs).unwrap();
            let back = read_records(&mut &buf[..]).unwrap();
            prop_assert_eq!(back.len(), 1);
            let bits = |r: &WeightRecord| r.tensor.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back[0]), bits(&recs[0]));
        }
    }
}
