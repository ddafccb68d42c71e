//! Binary array container.
//!
//! Bit-exact layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes  "PSRC"
//! version          u16      currently 1
//! array count      u16
//! per array:
//!   name length    u8       followed by that many UTF-8 bytes
//!   dtype          u8       0 = complex double (interleaved re/im, IEEE-754)
//!                           1 = double
//!                           2 = bool byte (0 or 1)
//!   ndim           u8
//!   dims           ndim x u64
//!   payload        row-major element bytes
//! metadata count   u16
//! per entry:
//!   key length     u16      followed by UTF-8 key bytes
//!   value length   u16      followed by UTF-8 value bytes
//! ```
//!
//! Metadata is stored sorted by key, so writing the same container twice
//! produces identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::error::{Error as CoreError, Result as CoreResult};
use crate::simulator::SimulatedDataset;
use crate::subspace::NavigatorCasorati;
use crate::types::{CasoratiImage, CoilSensitivities, KtMask, MultiCoilKspace};

pub const MAGIC: &[u8; 4] = b"PSRC";
pub const VERSION: u16 = 1;

/// Structured parse/serialize failures, carrying the byte offset where the
/// problem was detected.
#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte {offset}: expected \"PSRC\"")]
    BadMagic { offset: usize },
    #[error("unsupported container version {version}")]
    UnsupportedVersion { version: u16 },
    #[error("truncated at byte {offset}: expected {expected} more bytes, found {actual}")]
    Truncated {
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("malformed container at byte {offset}: {what}")]
    Malformed { offset: usize, what: String },
    #[error("duplicate array name `{name}`")]
    DuplicateArray { name: String },
    #[error("{what} exceeds the format limit")]
    TooLarge { what: &'static str },
}

pub type ContainerResult<T> = std::result::Result<T, ContainerError>;

/// Array payload in one of the three supported dtypes.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
    Bool(Vec<bool>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::Complex(v) => v.len(),
            ArrayData::Real(v) => v.len(),
            ArrayData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            ArrayData::Complex(_) => 0,
            ArrayData::Real(_) => 1,
            ArrayData::Bool(_) => 2,
        }
    }
}

/// A named shaped array.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: ArrayData,
}

/// An ordered collection of named arrays plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    arrays: Vec<NamedArray>,
    metadata: BTreeMap<String, String>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(|s| s.as_str())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Inserts an array; names must be unique and the shape must match the
    /// payload length.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: Vec<u64>,
        data: ArrayData,
    ) -> ContainerResult<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(ContainerError::DuplicateArray { name });
        }
        let count = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
        match count {
            Some(c) if c as usize == data.len() => {}
            _ => {
                return Err(ContainerError::Malformed {
                    offset: 0,
                    what: format!(
                        "array `{name}` shape {:?} does not match payload length {}",
                        shape,
                        data.len()
                    ),
                })
            }
        }
        self.arrays.push(NamedArray { name, shape, data });
        Ok(())
    }

    pub fn insert_complex(
        &mut self,
        name: impl Into<String>,
        shape: Vec<u64>,
        data: Vec<Complex64>,
    ) -> ContainerResult<()> {
        self.insert(name, shape, ArrayData::Complex(data))
    }

    pub fn insert_real(
        &mut self,
        name: impl Into<String>,
        shape: Vec<u64>,
        data: Vec<f64>,
    ) -> ContainerResult<()> {
        self.insert(name, shape, ArrayData::Real(data))
    }

    pub fn insert_bool(
        &mut self,
        name: impl Into<String>,
        shape: Vec<u64>,
        data: Vec<bool>,
    ) -> ContainerResult<()> {
        self.insert(name, shape, ArrayData::Bool(data))
    }

    pub fn to_bytes(&self) -> ContainerResult<Vec<u8>> {
        if self.arrays.len() > u16::MAX as usize {
            return Err(ContainerError::TooLarge { what: "array count" });
        }
        if self.metadata.len() > u16::MAX as usize {
            return Err(ContainerError::TooLarge {
                what: "metadata count",
            });
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u16).to_le_bytes());
        for a in &self.arrays {
            if a.name.len() > u8::MAX as usize {
                return Err(ContainerError::TooLarge { what: "array name" });
            }
            if a.shape.len() > u8::MAX as usize {
                return Err(ContainerError::TooLarge {
                    what: "array dimension count",
                });
            }
            out.push(a.name.len() as u8);
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.data.dtype_code());
            out.push(a.shape.len() as u8);
            for &d in &a.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &a.data {
                ArrayData::Complex(v) => {
                    for z in v {
                        out.extend_from_slice(&z.re.to_le_bytes());
                        out.extend_from_slice(&z.im.to_le_bytes());
                    }
                }
                ArrayData::Real(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ArrayData::Bool(v) => {
                    out.extend(v.iter().map(|&b| u8::from(b)));
                }
            }
        }
        out.extend_from_slice(&(self.metadata.len() as u16).to_le_bytes());
        for (k, v) in &self.metadata {
            if k.len() > u16::MAX as usize || v.len() > u16::MAX as usize {
                return Err(ContainerError::TooLarge {
                    what: "metadata entry",
                });
            }
            out.extend_from_slice(&(k.len() as u16).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u16).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> ContainerResult<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(ContainerError::BadMagic { offset: 0 });
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion { version });
        }
        let n_arrays = cur.u16()? as usize;
        let mut container = Container::new();
        for _ in 0..n_arrays {
            let name_offset = cur.pos;
            let name_len = cur.u8()? as usize;
            let name_bytes = cur.take(name_len)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| ContainerError::Malformed {
                    offset: name_offset,
                    what: "array name is not valid UTF-8".into(),
                })?
                .to_string();
            let dtype = cur.u8()?;
            let ndim = cur.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.u64()?);
            }
            let count_offset = cur.pos;
            let count = shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .and_then(|c| usize::try_from(c).ok())
                .ok_or_else(|| ContainerError::Malformed {
                    offset: count_offset,
                    what: format!("array `{name}` shape {shape:?} overflows"),
                })?;
            let data = match dtype {
                0 => {
                    let raw = cur.take_counted(count, 16)?;
                    let v = raw
                        .chunks_exact(16)
                        .map(|c| {
                            Complex64::new(
                                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                                f64::from_le_bytes(c[8..16].try_into().unwrap()),
                            )
                        })
                        .collect();
                    ArrayData::Complex(v)
                }
                1 => {
                    let raw = cur.take_counted(count, 8)?;
                    ArrayData::Real(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                2 => {
                    let offset = cur.pos;
                    let raw = cur.take_counted(count, 1)?;
                    let mut v = Vec::with_capacity(count);
                    for (i, &b) in raw.iter().enumerate() {
                        match b {
                            0 => v.push(false),
                            1 => v.push(true),
                            other => {
                                return Err(ContainerError::Malformed {
                                    offset: offset + i,
                                    what: format!("invalid boolean byte {other}"),
                                })
                            }
                        }
                    }
                    ArrayData::Bool(v)
                }
                other => {
                    return Err(ContainerError::Malformed {
                        offset: cur.pos - 1,
                        what: format!("unknown dtype code {other}"),
                    })
                }
            };
            if container.get(&name).is_some() {
                return Err(ContainerError::DuplicateArray { name });
            }
            container.arrays.push(NamedArray { name, shape, data });
        }
        let n_meta = cur.u16()? as usize;
        for _ in 0..n_meta {
            let klen = cur.u16()? as usize;
            let key_offset = cur.pos;
            let key = std::str::from_utf8(cur.take(klen)?)
                .map_err(|_| ContainerError::Malformed {
                    offset: key_offset,
                    what: "metadata key is not valid UTF-8".into(),
                })?
                .to_string();
            let vlen = cur.u16()? as usize;
            let val_offset = cur.pos;
            let value = std::str::from_utf8(cur.take(vlen)?)
                .map_err(|_| ContainerError::Malformed {
                    offset: val_offset,
                    what: "metadata value is not valid UTF-8".into(),
                })?
                .to_string();
            container.metadata.insert(key, value);
        }
        if cur.pos != bytes.len() {
            return Err(ContainerError::Malformed {
                offset: cur.pos,
                what: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }
        Ok(container)
    }

    pub fn write(&self, path: &Path) -> ContainerResult<()> {
        let bytes = self.to_bytes()?;
        crate::fsio::write_atomic(path, &bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> ContainerResult<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> ContainerResult<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(ContainerError::Truncated {
                offset: self.pos,
                expected: len,
                actual: available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn take_counted(&mut self, count: usize, elem: usize) -> ContainerResult<&'a [u8]> {
        let len = count
            .checked_mul(elem)
            .ok_or(ContainerError::TooLarge { what: "payload" })?;
        self.take(len)
    }

    fn u8(&mut self) -> ContainerResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> ContainerResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> ContainerResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

// ---------------------------------------------------------------------------
// dataset schema
// ---------------------------------------------------------------------------

/// Serializes a simulated dataset. Array layout:
/// `truth` complex [T, ny, nx], `sens` complex [J, ny, nx],
/// `kspace` complex [J, T, ny, nx], `mask` bool [ny, T],
/// `nav` complex [P, T_nav], `nav_frame_map` double [T_nav];
/// metadata keys `nav_coils` and `sigma2`.
pub fn dataset_to_container(d: &SimulatedDataset) -> ContainerResult<Container> {
    let mut c = Container::new();
    let (nx, ny, frames) = (d.truth.nx() as u64, d.truth.ny() as u64, d.truth.frames() as u64);
    c.insert_complex("truth", vec![frames, ny, nx], d.truth.data().to_vec())?;
    c.insert_complex(
        "sens",
        vec![d.sens.coils() as u64, ny, nx],
        d.sens.data().to_vec(),
    )?;
    c.insert_complex(
        "kspace",
        vec![d.kspace.coils() as u64, frames, ny, nx],
        d.kspace.data().to_vec(),
    )?;
    let mask_rows: Vec<bool> = (0..d.mask.ny())
        .flat_map(|ky| d.mask.row(ky).to_vec())
        .collect();
    c.insert_bool("mask", vec![ny, frames], mask_rows)?;
    c.insert_complex(
        "nav",
        vec![d.nav.rows() as u64, d.nav.cols() as u64],
        d.nav.data().to_vec(),
    )?;
    c.insert_real(
        "nav_frame_map",
        vec![d.nav.cols() as u64],
        d.nav.frame_map().iter().map(|&f| f as f64).collect(),
    )?;
    c.set_meta("nav_coils", d.nav.coils().to_string());
    c.set_meta("sigma2", d.sigma2.to_string());
    Ok(c)
}

fn required<'c>(c: &'c Container, name: &str) -> CoreResult<&'c NamedArray> {
    c.get(name)
        .ok_or_else(|| CoreError::invalid(format!("container is missing array `{name}`")))
}

fn complex_payload<'c>(a: &'c NamedArray) -> CoreResult<&'c [Complex64]> {
    match &a.data {
        ArrayData::Complex(v) => Ok(v),
        _ => Err(CoreError::invalid(format!(
            "array `{}` is not complex",
            a.name
        ))),
    }
}

fn dims(a: &NamedArray, n: usize) -> CoreResult<Vec<usize>> {
    if a.shape.len() != n {
        return Err(CoreError::invalid(format!(
            "array `{}` has {} dims, expected {n}",
            a.name,
            a.shape.len()
        )));
    }
    Ok(a.shape.iter().map(|&d| d as usize).collect())
}

/// Reconstructs a [`SimulatedDataset`] from a container written by
/// [`dataset_to_container`].
pub fn dataset_from_container(c: &Container) -> CoreResult<SimulatedDataset> {
    let truth_arr = required(c, "truth")?;
    let [frames, ny, nx] = dims(truth_arr, 3)?[..] else {
        unreachable!()
    };
    let truth = CasoratiImage::new(nx, ny, frames, complex_payload(truth_arr)?.to_vec())?;

    let sens_arr = required(c, "sens")?;
    let sdims = dims(sens_arr, 3)?;
    let sens = CoilSensitivities::new(sdims[0], sdims[2], sdims[1], complex_payload(sens_arr)?.to_vec())?;

    let mask_arr = required(c, "mask")?;
    let mdims = dims(mask_arr, 2)?;
    let mask_rows = match &mask_arr.data {
        ArrayData::Bool(v) => v.clone(),
        _ => return Err(CoreError::invalid("array `mask` is not boolean")),
    };
    let mask = KtMask::new(mdims[0], mdims[1], mask_rows)?;

    let kspace_arr = required(c, "kspace")?;
    let kdims = dims(kspace_arr, 4)?;
    let kspace = MultiCoilKspace::new(
        kdims[0],
        kdims[3],
        kdims[2],
        kdims[1],
        complex_payload(kspace_arr)?.to_vec(),
        mask.clone(),
    )?;

    let nav_arr = required(c, "nav")?;
    let ndims = dims(nav_arr, 2)?;
    let nav_coils: usize = c
        .meta("nav_coils")
        .ok_or_else(|| CoreError::invalid("container is missing metadata `nav_coils`"))?
        .parse()
        .map_err(|_| CoreError::invalid("metadata `nav_coils` is not an integer"))?;
    if nav_coils == 0 || ndims[0] % nav_coils != 0 {
        return Err(CoreError::invalid(
            "metadata `nav_coils` does not divide navigator rows",
        ));
    }
    let frame_map_arr = required(c, "nav_frame_map")?;
    let frame_map: Vec<usize> = match &frame_map_arr.data {
        ArrayData::Real(v) => v.iter().map(|&f| f as usize).collect(),
        _ => return Err(CoreError::invalid("array `nav_frame_map` is not double")),
    };
    let nav = NavigatorCasorati::new(
        nav_coils,
        ndims[0] / nav_coils,
        ndims[1],
        complex_payload(nav_arr)?.to_vec(),
        frame_map,
    )?;

    let sigma2: f64 = c
        .meta("sigma2")
        .unwrap_or("0")
        .parse()
        .map_err(|_| CoreError::invalid("metadata `sigma2` is not a number"))?;

    Ok(SimulatedDataset {
        truth,
        sens,
        kspace,
        nav,
        mask,
        sigma2,
    })
}
