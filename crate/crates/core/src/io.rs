//! Exchange formats: multi-channel WAV, `SFMAP1` feature maps, tensor bundles
//! and CSV.
//!
//! `SFMAP1` layout (little-endian): 6-byte magic `SFMAP1`, `u32` rows,
//! `u32` columns, then `rows × columns` `f64` values in row-major order.
//!
//! `SFTNS1` tensor bundles extend it with a tensor count: magic `SFTNS1`,
//! `u32` count, then per tensor `u32` rank, `rank × u32` dims and the `f64`
//! values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::{Error, Real, Result};

pub const SFMAP_MAGIC: &[u8; 6] = b"SFMAP1";
pub const TENSOR_MAGIC: &[u8; 6] = b"SFTNS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

/// Writes interleaved little-endian WAV.
pub fn write_wav<T: Real, P: AsRef<Path>>(
    path: P,
    channels: &[Vec<T>],
    sample_rate_hz: u32,
    format: SampleFormat,
) -> Result<()> {
    let n_ch = channels.len();
    if n_ch == 0 || n_ch > u16::MAX as usize {
        return Err(Error::InvalidInput(format!("cannot write {n_ch} channels")));
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::DimensionMismatch("channels differ in length".into()));
    }
    let spec = hound::WavSpec {
        channels: n_ch as u16,
        sample_rate: sample_rate_hz,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for n in 0..len {
        for ch in channels {
            let v = ch[n].to_f64_lossy();
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
                    w.write_sample(q)?;
                }
                SampleFormat::Float32 => w.write_sample(v as f32)?,
            }
        }
    }
    w.finalize()?;
    Ok(())
}

/// Reads a WAV file into `[channel][sample]` plus its sample rate. Integer
/// PCM is scaled to `[-1, 1)`.
pub fn read_wav<T: Real, P: AsRef<Path>>(path: P) -> Result<(Vec<Vec<T>>, u32)> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            r.samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / n_ch.max(1)); n_ch];
    for (i, v) in interleaved.into_iter().enumerate() {
        out[i % n_ch].push(T::lit(v));
    }
    Ok((out, spec.sample_rate))
}

pub fn write_sfmap<T: Real, W: Write>(mut w: W, values: &Array2<T>) -> Result<()> {
    let (rows, cols) = values.dim();
    w.write_all(SFMAP_MAGIC)?;
    w.write_all(&dim_u32(rows)?.to_le_bytes())?;
    w.write_all(&dim_u32(cols)?.to_le_bytes())?;
    for &v in values.iter() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_sfmap<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != SFMAP_MAGIC {
        return Err(Error::Format("missing SFMAP1 magic".into()));
    }
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let values = read_f64s(&mut r, rows * cols)?;
    ensure_eof(&mut r)?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_sfmap_file<T: Real, P: AsRef<Path>>(path: P, values: &Array2<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sfmap(&mut w, values)?;
    w.flush()?;
    Ok(())
}

pub fn read_sfmap_file<P: AsRef<Path>>(path: P) -> Result<Array2<f64>> {
    read_sfmap(BufReader::new(File::open(path)?))
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[ArrayD<f64>]) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&dim_u32(tensors.len())?.to_le_bytes())?;
    for t in tensors {
        w.write_all(&dim_u32(t.ndim())?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&dim_u32(d)?.to_le_bytes())?;
        }
        for &v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<ArrayD<f64>>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("missing SFTNS1 magic".into()));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let rank = read_u32(&mut r)? as usize;
        let dims = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let values = read_f64s(&mut r, dims.iter().product())?;
        out.push(ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| Error::Format(e.to_string()))?);
    }
    ensure_eof(&mut r)?;
    Ok(out)
}

/// CSV with a `f,t,value` header and one row per bin.
pub fn write_feature_csv<T: Real, W: Write>(mut w: W, values: &Array2<T>) -> Result<()> {
    writeln!(w, "f,t,value")?;
    for ((f, t), v) in values.indexed_iter() {
        writeln!(w, "{f},{t},{v:e}")?;
    }
    Ok(())
}

/// CSV with a `p,f,t,value` header for pair-indexed phase maps.
pub fn write_phase_csv<T: Real, W: Write>(mut w: W, values: &ndarray::Array3<T>) -> Result<()> {
    writeln!(w, "p,f,t,value")?;
    for ((p, f, t), v) in values.indexed_iter() {
        writeln!(w, "{p},{f},{t},{v:e}")?;
    }
    Ok(())
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::InvalidInput(format!("dimension {d} exceeds u32")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut b = [0u8; 8];
    (0..n)
        .map(|_| {
            r.read_exact(&mut b).map_err(truncated)?;
            Ok(f64::from_le_bytes(b))
        })
        .collect()
}

fn ensure_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes".into())),
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated data".into())
    } else {
        Error::Io(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Dimension;
    use proptest::prelude::*;

    #[test]
    fn sfmap_layout_is_exact() {
        let a = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_sfmap(&mut buf, &a).unwrap();
        assert_eq!(buf.len(), 6 + 4 + 4 + 6 * 8);
        assert_eq!(&buf[..6], b"SFMAP1");
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[10..14], &3u32.to_le_bytes());
        assert_eq!(&buf[14..22], &1.0f64.to_le_bytes());
        assert_eq!(&buf[22..30], &2.0f64.to_le_bytes());
        assert_eq!(&buf[38..46], &4.0f64.to_le_bytes());
        assert_eq!(read_sfmap(&buf[..]).unwrap(), a);
    }

    #[test]
    fn sfmap_rejects_bad_input() {
        assert!(matches!(
            read_sfmap(&b"SFMAP2\0\0\0\0\0\0\0\0"[..]),
            Err(Error::Format(_))
        ));
        let mut buf = Vec::new();
        write_sfmap(&mut buf, &Array2::<f64>::zeros((2, 2))).unwrap();
        assert!(read_sfmap(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_sfmap(&buf[..]).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let a = Array2::from_shape_vec((1, 2), vec![0.5f64, -1.0]).unwrap();
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["f,t,value", "0,0,5e-1", "0,1,-1e0"]);
    }

    #[test]
    fn wav_float_and_pcm() {
        let dir = tempfile::tempdir().unwrap();
        let chans = vec![vec![0.0f64, 0.25, -0.5, 0.999], vec![0.1, -0.1, 0.2, -1.0]];
        let p = dir.path().join("f.wav");
        write_wav(&p, &chans, 16_000, SampleFormat::Float32).unwrap();
        let (back, sr) = read_wav::<f64, _>(&p).unwrap();
        assert_eq!(sr, 16_000);
        for (a, b) in chans.iter().flatten().zip(back.iter().flatten()) {
            assert!((a - b).abs() < 1e-7);
        }
        let p = dir.path().join("i.wav");
        write_wav(&p, &chans, 8_000, SampleFormat::Pcm16).unwrap();
        let (back, sr) = read_wav::<f32, _>(&p).unwrap();
        assert_eq!((sr, back.len(), back[0].len()), (8_000, 2, 4));
        for (a, b) in chans.iter().flatten().zip(back.iter().flatten()) {
            assert!((*a as f32 - b).abs() < 1e-4);
        }
        // interleaving: second sample in file is channel 1, frame 0
        let bytes = std::fs::read(&p).unwrap();
        let data = &bytes[bytes.len() - 16..];
        assert_eq!(
            i16::from_le_bytes([data[2], data[3]]),
            (0.1f64 * 32767.0).round() as i16
        );
        assert!(write_wav(&p, &[vec![0.0f64; 3], vec![0.0; 2]], 8_000, SampleFormat::Pcm16).is_err());
    }

    proptest! {
        #[test]
        fn tensor_bundle_round_trip(dims in proptest::collection::vec(proptest::collection::vec(1usize..4, 0..4), 0..4), seed in 0u64..100) {
            let tensors: Vec<ArrayD<f64>> = dims.iter().enumerate().map(|(i, d)| {
                ArrayD::from_shape_fn(IxDyn(d), |ix| seed as f64 + i as f64 * 0.5 + ix.slice().iter().sum::<usize>() as f64)
            }).collect();
            let mut buf = Vec::new();
            write_tensors(&mut buf, &tensors).unwrap();
            prop_assert_eq!(read_tensors(&buf[..]).unwrap(), tensors);
        }
    }
}
