//! Bit-exact file formats for rigs, targets and weight sequences.
//!
//! Metadata lives in strict JSON (unknown fields rejected, explicit version
//! numbers); numeric payloads are raw 64-bit little-endian floats so a file
//! written on any platform parses identically on any other. Blendshape
//! matrices are stored column-major; frame sequences are frame-major.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rig::{Rig, TargetMesh, WeightVector};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Neutral,
    Blendshapes,
    Correction,
}

/// One region of the binary blob. Offsets and lengths count f64 elements,
/// not bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub kind: SectionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controllers: Option<Vec<usize>>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigManifest {
    pub format_version: u32,
    pub n_vertices: usize,
    pub n_controllers: usize,
    /// Path of the blob, relative to the manifest's directory.
    pub data_file: String,
    pub sections: Vec<Section>,
}

fn section_name(s: &Section) -> String {
    match s.kind {
        SectionKind::Neutral => "neutral".into(),
        SectionKind::Blendshapes => "blendshapes".into(),
        SectionKind::Correction => format!(
            "correction{:?}",
            s.controllers.as_deref().unwrap_or(&[])
        ),
    }
}

fn rig_blob(rig: &Rig) -> Vec<u8> {
    let nc = rig.n_coords();
    let m = rig.n_controllers();
    let n_corr =
        rig.corrections2().len() + rig.corrections3().len() + rig.corrections4().len();
    let mut blob = Vec::with_capacity(8 * (nc * (1 + m + n_corr)));
    let mut push = |v: &[f64]| {
        for &x in v {
            blob.write_f64::<LittleEndian>(x).expect("vec write");
        }
    };
    push(rig.neutral().as_slice());
    push(rig.blendshapes().as_slice()); // column-major storage
    for (_, v) in rig.corrections2() {
        push(v.as_slice());
    }
    for (_, v) in rig.corrections3() {
        push(v.as_slice());
    }
    for (_, v) in rig.corrections4() {
        push(v.as_slice());
    }
    blob
}

/// SHA-256 of the rig's binary payload (hex), recorded in weight-file
/// provenance to tie results to the rig that produced them.
pub fn rig_hash(rig: &Rig) -> String {
    let digest = Sha256::digest(rig_blob(rig));
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Write `dir/rig.json` plus `dir/rig.bin`; returns the manifest path.
pub fn save_rig(rig: &Rig, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let nc = rig.n_coords();
    let mut sections = Vec::new();
    let mut offset = 0;
    let mut claim = |kind, order, controllers, length: usize| {
        sections.push(Section {
            kind,
            order,
            controllers,
            offset,
            length,
        });
        offset += length;
    };
    claim(SectionKind::Neutral, None, None, nc);
    claim(
        SectionKind::Blendshapes,
        None,
        None,
        nc * rig.n_controllers(),
    );
    for (t, _) in rig.corrections2() {
        claim(SectionKind::Correction, Some(2), Some(t.to_vec()), nc);
    }
    for (t, _) in rig.corrections3() {
        claim(SectionKind::Correction, Some(3), Some(t.to_vec()), nc);
    }
    for (t, _) in rig.corrections4() {
        claim(SectionKind::Correction, Some(4), Some(t.to_vec()), nc);
    }
    let manifest = RigManifest {
        format_version: FORMAT_VERSION,
        n_vertices: rig.n_vertices(),
        n_controllers: rig.n_controllers(),
        data_file: "rig.bin".into(),
        sections,
    };
    fs::write(dir.join("rig.bin"), rig_blob(rig))?;
    let manifest_path = dir.join("rig.json");
    let mut out = fs::File::create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    Ok(manifest_path)
}

fn read_f64_le(bytes: &[u8]) -> Vec<f64> {
    let mut out = vec![0.0; bytes.len() / 8];
    LittleEndian::read_f64_into(&bytes[..out.len() * 8], &mut out);
    out
}

fn section_vector(blob: &[f64], s: &Section, expected_len: usize) -> Result<DVector<f64>> {
    if s.length != expected_len {
        return Err(Error::InvalidManifest(format!(
            "section `{}` has length {}, expected {expected_len}",
            section_name(s),
            s.length
        )));
    }
    Ok(DVector::from_column_slice(&blob[s.offset..s.offset + s.length]))
}

fn tuple_from<const K: usize>(s: &Section) -> Result<[usize; K]> {
    let controllers = s.controllers.as_deref().ok_or_else(|| {
        Error::InvalidManifest("correction section without controllers".into())
    })?;
    controllers.try_into().map_err(|_| {
        Error::InvalidManifest(format!(
            "order-{} correction lists {} controllers",
            s.order.unwrap_or(0),
            controllers.len()
        ))
    })
}

/// Load a rig from its manifest. Inverse of [`save_rig`], bitwise on all
/// floating-point payloads.
pub fn load_rig(manifest_path: &Path) -> Result<Rig> {
    if !manifest_path.is_file() {
        return Err(Error::DataFileNotFound(manifest_path.to_path_buf()));
    }
    let manifest: RigManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::ManifestVersion {
            expected: FORMAT_VERSION,
            found: manifest.format_version,
        });
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let data_path = dir.join(&manifest.data_file);
    if !data_path.is_file() {
        return Err(Error::DataFileNotFound(data_path));
    }
    let blob = read_f64_le(&fs::read(&data_path)?);

    // sections must fit in the blob and must not overlap
    let required = manifest
        .sections
        .iter()
        .map(|s| s.offset + s.length)
        .max()
        .unwrap_or(0);
    if blob.len() < required {
        return Err(Error::TruncatedBlob {
            expected: required,
            found: blob.len(),
        });
    }
    let mut spans: Vec<&Section> = manifest.sections.iter().collect();
    spans.sort_by_key(|s| s.offset);
    for pair in spans.windows(2) {
        if pair[0].offset + pair[0].length > pair[1].offset {
            return Err(Error::OverlappingSections {
                first: section_name(pair[0]),
                second: section_name(pair[1]),
            });
        }
    }

    let nc = 3 * manifest.n_vertices;
    let m = manifest.n_controllers;
    let mut neutral = None;
    let mut blendshapes = None;
    let mut corrections2 = Vec::new();
    let mut corrections3 = Vec::new();
    let mut corrections4 = Vec::new();
    for s in &manifest.sections {
        match s.kind {
            SectionKind::Neutral => {
                if neutral.replace(section_vector(&blob, s, nc)?).is_some() {
                    return Err(Error::InvalidManifest("duplicate neutral section".into()));
                }
            }
            SectionKind::Blendshapes => {
                let v = section_vector(&blob, s, nc * m)?;
                let mat = DMatrix::from_column_slice(nc, m, v.as_slice());
                if blendshapes.replace(mat).is_some() {
                    return Err(Error::InvalidManifest(
                        "duplicate blendshapes section".into(),
                    ));
                }
            }
            SectionKind::Correction => {
                let v = section_vector(&blob, s, nc)?;
                match s.order {
                    Some(2) => corrections2.push((tuple_from::<2>(s)?, v)),
                    Some(3) => corrections3.push((tuple_from::<3>(s)?, v)),
                    Some(4) => corrections4.push((tuple_from::<4>(s)?, v)),
                    other => {
                        return Err(Error::InvalidManifest(format!(
                            "correction section with order {other:?}"
                        )))
                    }
                }
            }
        }
    }
    let neutral =
        neutral.ok_or_else(|| Error::InvalidManifest("missing neutral section".into()))?;
    let blendshapes = blendshapes
        .ok_or_else(|| Error::InvalidManifest("missing blendshapes section".into()))?;
    Rig::new(neutral, blendshapes, corrections2, corrections3, corrections4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateConvention {
    /// Stored values are displacements from the rig's neutral mesh.
    Relative,
    /// Stored values are absolute positions; the loader subtracts the
    /// neutral mesh.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsSidecar {
    pub format_version: u32,
    pub n_frames: usize,
    pub n_coords: usize,
    pub coordinates: CoordinateConvention,
}

fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut os = data_path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn write_frames(path: &Path, frames: impl Iterator<Item = impl AsRef<[f64]>>) -> Result<()> {
    let mut bytes = Vec::new();
    for frame in frames {
        for &x in frame.as_ref() {
            bytes.write_f64::<LittleEndian>(x)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_sidecar<T: for<'de> Deserialize<'de>>(data_path: &Path) -> Result<T> {
    let path = sidecar_path(data_path);
    if !path.is_file() {
        return Err(Error::DataFileNotFound(path));
    }
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::InvalidSidecar(e.to_string()))
}

fn check_payload(found_elems: usize, n_frames: usize, per_frame: usize) -> Result<()> {
    let expected = n_frames * per_frame;
    if found_elems != expected {
        return Err(Error::TruncatedBlob {
            expected,
            found: found_elems,
        });
    }
    Ok(())
}

/// Write a frame-major target file (neutral-relative) plus its sidecar.
pub fn save_targets(targets: &[TargetMesh], path: &Path) -> Result<()> {
    let n_coords = targets.first().map_or(0, |t| t.len());
    for t in targets {
        if t.len() != n_coords {
            return Err(Error::DimensionMismatch {
                field: "targets",
                expected: n_coords,
                found: t.len(),
            });
        }
    }
    write_frames(path, targets.iter().map(|t| t.coords().as_slice().to_vec()))?;
    let sidecar = TargetsSidecar {
        format_version: FORMAT_VERSION,
        n_frames: targets.len(),
        n_coords,
        coordinates: CoordinateConvention::Relative,
    };
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    Ok(())
}

/// Load targets for a rig, converting absolute coordinates to
/// neutral-relative when the sidecar says so.
pub fn load_targets(path: &Path, rig: &Rig) -> Result<Vec<TargetMesh>> {
    let sidecar: TargetsSidecar = read_sidecar(path)?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::ManifestVersion {
            expected: FORMAT_VERSION,
            found: sidecar.format_version,
        });
    }
    if sidecar.n_coords != rig.n_coords() {
        return Err(Error::DimensionMismatch {
            field: "targets",
            expected: rig.n_coords(),
            found: sidecar.n_coords,
        });
    }
    if !path.is_file() {
        return Err(Error::DataFileNotFound(path.to_path_buf()));
    }
    let data = read_f64_le(&fs::read(path)?);
    check_payload(data.len(), sidecar.n_frames, sidecar.n_coords)?;
    let mut targets = Vec::with_capacity(sidecar.n_frames);
    for f in 0..sidecar.n_frames {
        let mut v =
            DVector::from_column_slice(&data[f * sidecar.n_coords..(f + 1) * sidecar.n_coords]);
        if sidecar.coordinates == CoordinateConvention::Absolute {
            v -= rig.neutral();
        }
        targets.push(TargetMesh::new(v));
    }
    Ok(targets)
}

/// How a weight file was produced; informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsProvenance {
    pub solver: String,
    pub lambda: f64,
    pub init: String,
    pub rig_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSidecar {
    pub format_version: u32,
    pub n_frames: usize,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<WeightsProvenance>,
}

/// Write a frame-major weight file plus its sidecar.
pub fn save_weights(
    weights: &[WeightVector],
    provenance: Option<WeightsProvenance>,
    path: &Path,
) -> Result<()> {
    let m = weights.first().map_or(0, |w| w.len());
    for w in weights {
        if w.len() != m {
            return Err(Error::DimensionMismatch {
                field: "weights",
                expected: m,
                found: w.len(),
            });
        }
    }
    write_frames(path, weights.iter().map(|w| w.as_slice().to_vec()))?;
    let sidecar = WeightsSidecar {
        format_version: FORMAT_VERSION,
        n_frames: weights.len(),
        m,
        provenance,
    };
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(Vec<WeightVector>, WeightsSidecar)> {
    let sidecar: WeightsSidecar = read_sidecar(path)?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::ManifestVersion {
            expected: FORMAT_VERSION,
            found: sidecar.format_version,
        });
    }
    if !path.is_file() {
        return Err(Error::DataFileNotFound(path.to_path_buf()));
    }
    let data = read_f64_le(&fs::read(path)?);
    check_payload(data.len(), sidecar.n_frames, sidecar.m)?;
    let mut weights = Vec::with_capacity(sidecar.n_frames);
    for f in 0..sidecar.n_frames {
        let v = DVector::from_column_slice(&data[f * sidecar.m..(f + 1) * sidecar.m]);
        weights.push(WeightVector::new(v).map_err(|e| Error::InvalidSidecar(e.to_string()))?);
    }
    Ok((weights, sidecar))
}
