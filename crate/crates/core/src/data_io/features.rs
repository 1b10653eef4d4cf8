//! Feature files.
//!
//! Binary layout (`.emf`):
//!
//! ```text
//! "EMF1"
//! u32 version (= 1)
//! u32 dim
//! u64 record count
//! str taxonomy name
//! u8  domain   (0 speech, 1 music, 2 tag)
//! u8  modality (0 audio, 1 text, 2 fusion, 3 tag)
//! per record: str id, str label, dim × f64
//! ```
//!
//! Integers and floats are little-endian, `str` is a `u32` byte length
//! followed by UTF-8. The text variant starts with a header line
//!
//! ```text
//! #EMF-TEXT dim=4 domain=speech modality=audio taxonomy=speech
//! ```
//!
//! followed by one whitespace-separated `id label v1 … vdim` record per line.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{ByteReader, ByteWriter};
use crate::emotion_space::Taxonomy;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"EMF1";
pub const FEATURE_VERSION: u32 = 1;
const TEXT_HEADER: &str = "#EMF-TEXT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Speech,
    Music,
    Tag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Audio,
    Text,
    Fusion,
    Tag,
}

macro_rules! coded_enum {
    ($ty:ident { $($variant:ident = $code:literal, $name:literal;)* }) => {
        impl $ty {
            pub fn code(self) -> u8 {
                match self { $($ty::$variant => $code,)* }
            }

            pub fn from_code(code: u8) -> Option<Self> {
                match code { $($code => Some($ty::$variant),)* _ => None }
            }

            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name,)* }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)*
                    _ => Err(Error::format(stringify!($ty), format!("unknown value `{s}`"))),
                }
            }
        }
    };
}

coded_enum!(Domain {
    Speech = 0, "speech";
    Music = 1, "music";
    Tag = 2, "tag";
});

coded_enum!(Modality {
    Audio = 0, "audio";
    Text = 1, "text";
    Fusion = 2, "fusion";
    Tag = 3, "tag";
});

/// One ingested item: a frozen-encoder feature vector and its emotion label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub domain: Domain,
    pub modality: Modality,
    pub vector: Vec<f64>,
    pub label: String,
}

/// Everything stored in one feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub taxonomy: String,
    pub domain: Domain,
    pub modality: Modality,
    pub records: Vec<FeatureRecord>,
}

impl FeatureFile {
    pub fn new(
        dim: usize,
        taxonomy: impl Into<String>,
        domain: Domain,
        modality: Modality,
        records: Vec<FeatureRecord>,
    ) -> Result<Self> {
        let file = Self {
            dim,
            taxonomy: taxonomy.into(),
            domain,
            modality,
            records,
        };
        file.validate()?;
        Ok(file)
    }

    /// Checks vector widths, id uniqueness and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.vector.len() != self.dim {
                return Err(Error::Record {
                    id: r.id.clone(),
                    reason: format!("{} values under header dim {}", r.vector.len(), self.dim),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Record {
                    id: r.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Record {
                    id: r.id.clone(),
                    reason: "non-finite feature value".into(),
                });
            }
            if r.id.is_empty() || r.id.chars().any(char::is_whitespace) {
                return Err(Error::Record {
                    id: r.id.clone(),
                    reason: "ids must be non-empty and free of whitespace".into(),
                });
            }
        }
        Ok(())
    }

    /// Rejects any record whose label is not in `taxonomy`.
    pub fn check_labels(&self, taxonomy: &Taxonomy) -> Result<()> {
        for r in &self.records {
            if !taxonomy.contains(&r.label) {
                return Err(Error::Record {
                    id: r.id.clone(),
                    reason: format!("label `{}` not in taxonomy `{}`", r.label, taxonomy.name()),
                });
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.records.len() * self.dim);
        for r in &self.records {
            data.extend_from_slice(&r.vector);
        }
        Matrix::from_vec(self.records.len(), self.dim, data).expect("validated widths")
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(FEATURE_MAGIC);
        w.u32(FEATURE_VERSION);
        w.u32(self.dim as u32);
        w.u64(self.records.len() as u64);
        w.str(&self.taxonomy);
        w.u8(self.domain.code());
        w.u8(self.modality.code());
        for r in &self.records {
            w.str(&r.id);
            w.str(&r.label);
            w.f64s(&r.vector);
        }
        w.into_bytes()
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "feature file");
        r.expect_magic(FEATURE_MAGIC)?;
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::format("feature file", format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let taxonomy = r.str()?;
        let domain_code = r.u8()?;
        let domain = Domain::from_code(domain_code)
            .ok_or_else(|| Error::format("feature file", format!("unknown domain code {domain_code}")))?;
        let modality_code = r.u8()?;
        let modality = Modality::from_code(modality_code)
            .ok_or_else(|| Error::format("feature file", format!("unknown modality code {modality_code}")))?;
        let mut records = Vec::with_capacity((count as usize).min(1 << 20));
        for _ in 0..count {
            let id = r.str()?;
            let label = r.str()?;
            let vector = r.f64s(dim).map_err(|e| Error::Record {
                id: id.clone(),
                reason: e.to_string(),
            })?;
            records.push(FeatureRecord {
                id,
                domain,
                modality,
                vector,
                label,
            });
        }
        r.finish()?;
        Self::new(dim, taxonomy, domain, modality, records)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{TEXT_HEADER} dim={} domain={} modality={} taxonomy={}\n",
            self.dim, self.domain, self.modality, self.taxonomy
        );
        for r in &self.records {
            out.push_str(&r.id);
            out.push(' ');
            out.push_str(&r.label);
            for v in &r.vector {
                // `{:?}` prints the shortest string that parses back to the same f64
                out.push_str(&format!(" {v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .by_ref()
            .map(|(_, l)| l.trim())
            .find(|l| !l.is_empty())
            .ok_or_else(|| Error::format("feature text file", "empty file"))?;
        let rest = header
            .strip_prefix(TEXT_HEADER)
            .ok_or_else(|| Error::format("feature text file", format!("first line must start with `{TEXT_HEADER}`")))?;
        let mut dim = None;
        let mut domain = None;
        let mut modality = None;
        let mut taxonomy = None;
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::format("feature text file", format!("header field `{kv}` is not key=value")))?;
            match k {
                "dim" => {
                    dim = Some(v.parse::<usize>().map_err(|_| Error::format("feature text file", format!("bad dim `{v}`")))?)
                }
                "domain" => domain = Some(v.parse::<Domain>()?),
                "modality" => modality = Some(v.parse::<Modality>()?),
                "taxonomy" => taxonomy = Some(v.to_string()),
                _ => return Err(Error::format("feature text file", format!("unknown header field `{k}`"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::format("feature text file", "header lacks dim"))?;
        let domain = domain.ok_or_else(|| Error::format("feature text file", "header lacks domain"))?;
        let modality = modality.unwrap_or(match domain {
            Domain::Tag => Modality::Tag,
            _ => Modality::Audio,
        });
        let taxonomy = taxonomy.unwrap_or_else(|| domain.name().to_string());

        let mut records = Vec::new();
        for (lineno, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields.next().expect("non-empty line").to_string();
            let label = fields.next().ok_or_else(|| Error::Record {
                id: id.clone(),
                reason: format!("line {}: missing label", lineno + 1),
            })?;
            let vector = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Record {
                        id: id.clone(),
                        reason: format!("line {}: `{f}` is not a number", lineno + 1),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            records.push(FeatureRecord {
                id,
                domain,
                modality,
                vector,
                label: label.to_string(),
            });
        }
        Self::new(dim, taxonomy, domain, modality, records)
    }

    /// Reads either variant, choosing by the leading magic bytes.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(FEATURE_MAGIC) {
            Self::from_binary(&bytes)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::format("feature file", format!("{} is neither EMF1 binary nor UTF-8 text", path.display())))?;
            Self::from_text(&text)
        }
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_binary())
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a feature file, optionally checking every label against a taxonomy.
pub fn load_features(path: &Path, taxonomy: Option<&Taxonomy>) -> Result<Vec<FeatureRecord>> {
    let file = FeatureFile::read(path)?;
    if let Some(t) = taxonomy {
        file.check_labels(t)?;
    }
    Ok(file.records)
}
