//! Binary template store.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "SLRPSHLD" | u16 version
//! u32 d | u32 m | f64 alpha | f64 beta | u8 dropout mode | i64 created_utc | u64 records
//! per record: u32 label length | label (UTF-8)
//!             d × f64 protected | ceil(d/8) bytes mask, bit i of byte j is coordinate 8j+i
//!             d × f64 key | m × f64 weights
//! SHA-256 of everything above
//! ```
//!
//! A human-readable copy of the header is written next to the store as
//! `<file>.header.txt`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matching::EnrollmentRecord;
use crate::protection::{DropoutMask, DropoutMode, KeyTemplate, ProtectedTemplate, ProtectionParams};
use crate::template::{GroupLayout, GroupWeights};

pub const MAGIC: &[u8; 8] = b"SLRPSHLD";
pub const FORMAT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreHeader {
    pub format_version: u16,
    pub layout: GroupLayout,
    pub alpha: f64,
    pub beta: f64,
    pub dropout_mode: DropoutMode,
    /// Seconds since the Unix epoch.
    pub created_utc: i64,
}

impl StoreHeader {
    pub fn from_params(params: &ProtectionParams, created_utc: i64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            layout: params.layout,
            alpha: params.alpha,
            beta: params.beta,
            dropout_mode: params.dropout_mode,
            created_utc,
        }
    }

    /// Parameters recorded in the header, with a zero seed.
    pub fn params(&self) -> Result<ProtectionParams> {
        ProtectionParams::new(self.alpha, self.beta, self.layout, self.dropout_mode)
    }

    pub fn dump(&self, records: usize) -> String {
        format!(
            "format_version: {}\nd: {}\nm: {}\nalpha: {}\nbeta: {}\ndropout_mode: {}\ncreated_utc: {}\nrecords: {}\n",
            self.format_version,
            self.layout.d(),
            self.layout.m(),
            self.alpha,
            self.beta,
            self.dropout_mode.as_str(),
            self.created_utc,
            records
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateStore {
    header: StoreHeader,
    params: ProtectionParams,
    records: Vec<EnrollmentRecord>,
}

impl TemplateStore {
    pub fn new(params: &ProtectionParams, created_utc: i64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            header: StoreHeader::from_params(params, created_utc),
            params: ProtectionParams { rng_seed: 0, ..*params },
            records: Vec::new(),
        })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn params(&self) -> &ProtectionParams {
        &self.params
    }

    pub fn records(&self) -> &[EnrollmentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record made under this store's parameters.
    pub fn push(&mut self, rec: EnrollmentRecord) -> Result<()> {
        self.params.layout.check_same(&rec.protected.layout())?;
        self.params.layout.check_same(&rec.key.layout())?;
        if rec.protected.params_fingerprint() != self.params.fingerprint() {
            return Err(Error::ParamsMismatch);
        }
        if rec.identity_label.len() > u32::MAX as usize {
            return Err(Error::Format("label too long".into()));
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let layout = self.header.layout;
        let (d, m) = (layout.d(), layout.m());
        let record_len = 4 + 16 * d + d.div_ceil(8) + 8 * m;
        let mut b = Vec::with_capacity(64 + self.records.len() * (record_len + 16) + DIGEST_LEN);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.header.format_version.to_le_bytes());
        b.extend_from_slice(&(d as u32).to_le_bytes());
        b.extend_from_slice(&(m as u32).to_le_bytes());
        b.extend_from_slice(&self.header.alpha.to_le_bytes());
        b.extend_from_slice(&self.header.beta.to_le_bytes());
        b.push(self.header.dropout_mode.code());
        b.extend_from_slice(&self.header.created_utc.to_le_bytes());
        b.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for rec in &self.records {
            b.extend_from_slice(&(rec.identity_label.len() as u32).to_le_bytes());
            b.extend_from_slice(rec.identity_label.as_bytes());
            for v in rec.protected.values() {
                b.extend_from_slice(&v.to_le_bytes());
            }
            let mut packed = vec![0u8; d.div_ceil(8)];
            for (i, kept) in rec.protected.mask().kept().iter().enumerate() {
                if *kept {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            b.extend_from_slice(&packed);
            for v in rec.key.values() {
                b.extend_from_slice(&v.to_le_bytes());
            }
            for w in rec.protected.weights().as_slice() {
                b.extend_from_slice(&w.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a template store".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let d = r.u32()? as usize;
        let m = r.u32()? as usize;
        let layout = GroupLayout::new(d, m)?;
        let alpha = r.f64()?;
        let beta = r.f64()?;
        let mode = r.u8()?;
        let dropout_mode =
            DropoutMode::from_code(mode).ok_or_else(|| Error::Format(format!("unknown dropout mode code {mode}")))?;
        let created_utc = r.i64()?;
        let count = r.u64()?;
        let header = StoreHeader {
            format_version: version,
            layout,
            alpha,
            beta,
            dropout_mode,
            created_utc,
        };
        let mut store = Self::new(&header.params()?, created_utc)?;
        let fingerprint = store.params.fingerprint();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let label = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("label is not valid UTF-8".into()))?;
            let protected = r.f64s(d)?;
            let packed = r.take(d.div_ceil(8))?;
            let kept: Vec<bool> = (0..d).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
            if packed.iter().enumerate().any(|(j, byte)| {
                let valid = (d - 8 * j).min(8);
                valid < 8 && byte >> valid != 0
            }) {
                return Err(Error::Format("padding bits set in mask".into()));
            }
            let key = KeyTemplate::from_normalized(r.f64s(d)?, layout, 1e-6)?;
            let weights = GroupWeights::new(r.f64s(m)?)?;
            let mask = DropoutMask::from_kept(kept, layout)?;
            let protected = ProtectedTemplate::from_parts(protected, mask, weights, layout, fingerprint)?;
            store.push(EnrollmentRecord {
                identity_label: label,
                protected,
                key,
            })?;
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after records".into()));
        }
        Ok(store)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".header.txt");
        PathBuf::from(s)
    }

    /// Writes the store and its header dump. The data goes to a new
    /// temporary file first and is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(format!(".tmp{}", std::process::id()));
        let tmp = PathBuf::from(tmp);
        {
            let mut f = OpenOptions::new().write(true).create_new(true).open(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        if let Err(e) = fs::rename(&tmp, path) {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        fs::write(Self::sidecar_path(path), self.header.dump(self.records.len()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated store".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protection::{protect, sample_key};

    fn store(n: usize, params: &ProtectionParams) -> TemplateStore {
        let mut s = TemplateStore::new(params, 1_700_000_000).unwrap();
        let weights = GroupWeights::uniform(params.layout.m());
        for i in 0..n {
            let t = sample_key(params.layout, 100 + i as u64).template().clone();
            let (protected, key) = protect(&t, params, &weights, i as u64).unwrap();
            s.push(EnrollmentRecord {
                identity_label: format!("person-{i}-ü"),
                protected,
                key,
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let params = ProtectionParams::default();
        let s = store(5, &params);
        let bytes = s.to_bytes();
        let back = TemplateStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in back.records().iter().zip(s.records()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.protected.values()), bits(b.protected.values()));
        }
    }

    #[test]
    fn save_load_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.bin");
        let s = store(3, &ProtectionParams::default());
        s.save(&path).unwrap();
        let first = fs::read(&path).unwrap();
        TemplateStore::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        let dump = fs::read_to_string(TemplateStore::sidecar_path(&path)).unwrap();
        assert!(dump.contains("d: 784\n") && dump.contains("records: 3\n"));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn exact_byte_layout() {
        let layout = GroupLayout::new(4, 2).unwrap();
        let params = ProtectionParams::new(0.5, 0.0, layout, DropoutMode::Random).unwrap();
        let bytes = store(1, &params).to_bytes();
        let header = 8 + 2 + 4 + 4 + 8 + 8 + 1 + 8 + 8;
        let record = 4 + "person-0-ü".len() + 4 * 8 + 1 + 4 * 8 + 2 * 8;
        assert_eq!(bytes.len(), header + record + 32);
        assert_eq!(&bytes[..8], b"SLRPSHLD");
        assert_eq!(&bytes[8..10], &[1, 0]);
        assert_eq!(&bytes[10..14], &[4, 0, 0, 0]);
        // all four coordinates kept: low nibble set, padding clear
        let mask_at = header + 4 + "person-0-ü".len() + 32;
        assert_eq!(bytes[mask_at], 0x0f);
    }

    #[test]
    fn corruption_is_rejected() {
        let s = store(2, &ProtectionParams::default());
        let mut bytes = s.to_bytes();
        bytes[100] ^= 1;
        assert!(matches!(TemplateStore::from_bytes(&bytes), Err(Error::Format(_))));
        let good = s.to_bytes();
        assert!(TemplateStore::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(TemplateStore::from_bytes(b"garbage").is_err());
    }

    fn resealed(mut bytes: Vec<u8>, at: usize, patch: &[u8]) -> Vec<u8> {
        bytes[at..at + patch.len()].copy_from_slice(patch);
        let n = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        bytes
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let params = ProtectionParams::default();
        let s = store(1, &params);
        let bytes = s.to_bytes();
        // d no longer matches the record payload
        let bad_d = resealed(bytes.clone(), 10, &780u32.to_le_bytes());
        assert!(TemplateStore::from_bytes(&bad_d).is_err());
        let bad_m = resealed(bytes.clone(), 14, &0u32.to_le_bytes());
        assert!(matches!(
            TemplateStore::from_bytes(&bad_m),
            Err(Error::InvalidLayout(_))
        ));
        let bad_alpha = resealed(bytes.clone(), 18, &1.5f64.to_le_bytes());
        assert!(matches!(
            TemplateStore::from_bytes(&bad_alpha),
            Err(Error::InvalidParams(_))
        ));
        let bad_mode = resealed(bytes.clone(), 34, &[7]);
        assert!(matches!(TemplateStore::from_bytes(&bad_mode), Err(Error::Format(_))));
        let bad_version = resealed(bytes, 8, &2u16.to_le_bytes());
        assert!(matches!(TemplateStore::from_bytes(&bad_version), Err(Error::Format(_))));

        let mut other = TemplateStore::new(&ProtectionParams { alpha: 0.5, ..params }, 0).unwrap();
        assert_eq!(other.push(s.records()[0].clone()), Err(Error::ParamsMismatch));
    }

    #[test]
    fn empty_store_round_trips() {
        let s = TemplateStore::new(&ProtectionParams::default(), -5).unwrap();
        let back = TemplateStore::from_bytes(&s.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.header().created_utc, -5);
    }
}
