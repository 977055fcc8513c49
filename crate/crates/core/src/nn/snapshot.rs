//! Flat binary parameter snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "BRLN" | u32 version | u8 output activation | u64 head_count
//!        | u64 n_sizes | n_sizes × u64 layer size
//!        | u64 n_params | n_params × f64 parameter
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{DenseNet, OutputActivation};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"BRLN";
const VERSION: u32 = 1;

pub fn write_net<T: Scalar, W: Write>(net: &DenseNet<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[net.output_activation().code()])?;
    w.write_all(&(net.head_count() as u64).to_le_bytes())?;
    w.write_all(&(net.layer_sizes().len() as u64).to_le_bytes())?;
    for &n in net.layer_sizes() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&(net.num_params() as u64).to_le_bytes())?;
    for &p in net.params() {
        w.write_all(&p.as_f64().to_le_bytes())?;
    }
    Ok(())
}

/// Byte reader that remembers its position for error reporting.
pub(crate) struct Cursor<R> {
    inner: R,
    pub offset: u64,
}

impl<R: Read> Cursor<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(self.offset, format!("truncated while reading {what}"))
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes::<1>(what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    pub fn vec(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(self.offset, format!("truncated while reading {what}")))?;
        self.offset += len as u64;
        Ok(buf)
    }

    /// Fails unless the underlying reader is exhausted.
    pub fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(
                self.offset,
                "trailing bytes after declared content",
            )),
        }
    }
}

pub fn read_net<T: Scalar, R: Read>(r: R) -> Result<DenseNet<T>> {
    let mut c = Cursor::new(r);
    let net = read_net_from(&mut c)?;
    c.expect_end()?;
    Ok(net)
}

pub(crate) fn read_net_from<T: Scalar, R: Read>(c: &mut Cursor<R>) -> Result<DenseNet<T>> {
    let at = c.offset;
    if &c.bytes::<4>("magic")? != MAGIC {
        return Err(Error::format(at, "bad magic, expected BRLN"));
    }
    let at = c.offset;
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = c.offset;
    let output = OutputActivation::from_code(c.u8("output activation")?)
        .ok_or_else(|| Error::format(at, "unknown output activation"))?;
    let head_count = c.u64("head count")? as usize;
    let at = c.offset;
    let n_sizes = c.u64("layer count")? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::format(
            at,
            format!("implausible layer count {n_sizes}"),
        ));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(c.u64("layer size")? as usize);
    }
    let at = c.offset;
    let n_params = c.u64("parameter count")? as usize;
    let expected: usize = sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
    if n_params != expected {
        return Err(Error::format(
            at,
            format!("declared {n_params} parameters but layer sizes imply {expected}"),
        ));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        params.push(T::of(c.f64("parameter")?));
    }
    DenseNet::from_parts(&sizes, head_count, output, params)
        .map_err(|e| Error::format(at, e.to_string()))
}

pub fn save_net<T: Scalar>(net: &DenseNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_net(net, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_net<T: Scalar>(path: impl AsRef<Path>) -> Result<DenseNet<T>> {
    read_net(std::fs::File::open(path).map(std::io::BufReader::new)?)
}
