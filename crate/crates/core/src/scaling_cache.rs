//! The `C(sΩ) = C(Ω)/s` scaling law and a shape-keyed BCM cache: one assembly
//! per shape class, every similar subdomain served by rescaling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{compute_bcm, AssemblyOptions, Bcm};
use crate::basis::{BasisPolicy, BasisSet};
use crate::error::{Error, Result};
use crate::geometry::{normalize, signature_of_normalized, BoundaryMesh, ShapeSignature};

pub const DEFAULT_CAPACITY: usize = 4096;

const FORMAT_TAG: &str = "trefftz-bcm-cache";
const FORMAT_VERSION: u32 = 1;

/// BCM of the uniformly scaled domain `sΩ`: entries divided by `s`, node
/// points and weights multiplied by `s`.
pub fn scale_bcm(bcm: &Bcm, s: f64) -> Result<Bcm> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidScale(s));
    }
    Ok(Bcm {
        matrix: &bcm.matrix / s,
        node_points: bcm.node_points.iter().map(|&p| p * s).collect(),
        node_weights: bcm.node_weights.iter().map(|w| w * s).collect(),
        ..bcm.clone()
    })
}

/// Diagonals of `H_s` and `G_s` with `H(sΩ) = H_s H(Ω)` and `G(sΩ) = G_s G(Ω)`:
/// `s·R^q_i(s)` and `s·R^u_i(s)`.
pub fn diagonal_scale_factors(basis: &BasisSet, s: f64) -> (DVector<f64>, DVector<f64>) {
    let hs = basis.functions().iter().map(|f| s * f.radial_q(s));
    let gs = basis.functions().iter().map(|f| s * f.radial_u(s));
    (
        DVector::from_iterator(basis.len(), hs),
        DVector::from_iterator(basis.len(), gs),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedBcm {
    /// Normalization scale of the mesh that first populated the entry.
    pub reference_scale: f64,
    /// BCM of the normalized (radius-1, centred) mesh.
    pub bcm: Bcm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub assemblies: u64,
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn lookups(&self) -> u64 {
        self.hits + self.misses
    }
}

struct Inner {
    entries: LruCache<ShapeSignature, Arc<CachedBcm>>,
    stats: CacheStats,
}

pub struct BcmCache {
    inner: Mutex<Inner>,
    enabled: bool,
    options: AssemblyOptions,
}

impl Default for BcmCache {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl std::fmt::Debug for BcmCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BcmCache")
            .field("enabled", &self.enabled)
            .field("len", &self.len())
            .field("stats", &self.stats())
            .finish()
    }
}

/// Normalized mesh, its scale and its signature.
struct Prepared {
    normalized: BoundaryMesh,
    scale: f64,
    signature: ShapeSignature,
}

fn prepare(mesh: &BoundaryMesh, policy: BasisPolicy) -> Result<Prepared> {
    let (normalized, scale, _) = normalize(mesh)?;
    let signature = signature_of_normalized(&normalized, policy.id());
    Ok(Prepared {
        normalized,
        scale,
        signature,
    })
}

impl BcmCache {
    pub fn new(capacity: usize) -> Self {
        Self::with_options(capacity, AssemblyOptions::default())
    }

    pub fn with_options(capacity: usize, options: AssemblyOptions) -> Self {
        let capacity = NonZeroUsize::new(capacity.max(1)).unwrap();
        Self {
            inner: Mutex::new(Inner {
                entries: LruCache::new(capacity),
                stats: CacheStats::default(),
            }),
            enabled: true,
            options: AssemblyOptions {
                normalized: false,
                ..options
            },
        }
    }

    /// Every lookup assembles; nothing is stored.
    pub fn passthrough() -> Self {
        Self {
            enabled: false,
            ..Self::new(1)
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn options(&self) -> &AssemblyOptions {
        &self.options
    }

    pub fn stats(&self) -> CacheStats {
        self.inner.lock().unwrap().stats
    }

    pub fn reset_stats(&self) {
        self.inner.lock().unwrap().stats = CacheStats::default();
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.inner.lock().unwrap().entries.clear();
    }

    fn lookup(&self, signature: &ShapeSignature) -> Option<Arc<CachedBcm>> {
        if !self.enabled {
            return None;
        }
        let mut inner = self.inner.lock().unwrap();
        let found = inner.entries.get(signature).cloned();
        if found.is_some() {
            inner.stats.hits += 1;
        }
        found
    }

    fn assemble(&self, p: &Prepared, policy: BasisPolicy) -> Result<Arc<CachedBcm>> {
        let bcm = compute_bcm(&p.normalized, policy, &self.options)?;
        let entry = Arc::new(CachedBcm {
            reference_scale: p.scale,
            bcm,
        });
        let mut inner = self.inner.lock().unwrap();
        inner.stats.assemblies += 1;
        inner.stats.misses += 1;
        if self.enabled {
            // A concurrent miss may have stored the same shape already; keep the first.
            if let Some(existing) = inner.entries.get(&p.signature) {
                return Ok(existing.clone());
            }
            inner.entries.put(p.signature.clone(), entry.clone());
        }
        Ok(entry)
    }

    fn materialize(entry: &CachedBcm, mesh: &BoundaryMesh, scale: f64) -> Bcm {
        Bcm {
            matrix: &entry.bcm.matrix / scale,
            node_points: mesh.node_points(),
            node_weights: mesh.node_weights(),
            ..entry.bcm.clone()
        }
    }

    /// BCM of `mesh`, rescaled from the stored shape representative when one exists.
    pub fn get_or_compute(&self, mesh: &BoundaryMesh, policy: BasisPolicy) -> Result<Bcm> {
        let p = prepare(mesh, policy)?;
        let entry = match self.lookup(&p.signature) {
            Some(e) => e,
            None => self.assemble(&p, policy)?,
        };
        Ok(Self::materialize(&entry, mesh, p.scale))
    }

    /// Batched lookup: the first occurrence of each uncached shape is
    /// assembled in parallel, everything else is served as a hit. Results and
    /// counters do not depend on thread scheduling.
    pub fn get_or_compute_many(&self, meshes: &[&BoundaryMesh], policy: BasisPolicy) -> Vec<Result<Bcm>> {
        let prepared: Vec<Result<Prepared>> = meshes.par_iter().map(|m| prepare(m, policy)).collect();
        if !self.enabled {
            return prepared
                .into_par_iter()
                .zip(meshes.par_iter())
                .map(|(p, m)| {
                    let p = p?;
                    let entry = self.assemble(&p, policy)?;
                    Ok(Self::materialize(&entry, m, p.scale))
                })
                .collect();
        }

        // First occurrence of each signature not already stored.
        let mut first_seen: HashMap<&ShapeSignature, usize> = HashMap::new();
        let mut to_assemble = Vec::new();
        {
            let inner = self.inner.lock().unwrap();
            for (k, p) in prepared.iter().enumerate() {
                if let Ok(p) = p {
                    if !inner.entries.contains(&p.signature) && !first_seen.contains_key(&p.signature) {
                        first_seen.insert(&p.signature, k);
                        to_assemble.push(k);
                    }
                }
            }
        }
        let assembled: HashMap<usize, Result<Arc<CachedBcm>>> = to_assemble
            .par_iter()
            .map(|&k| {
                let p = prepared[k].as_ref().expect("only valid meshes are scheduled");
                (k, self.assemble(p, policy))
            })
            .collect();

        prepared
            .iter()
            .zip(meshes)
            .enumerate()
            .map(|(k, (p, mesh))| {
                let p = p.as_ref().map_err(Clone::clone)?;
                let entry = match assembled.get(&k) {
                    Some(r) => r.as_ref().map_err(Clone::clone)?.clone(),
                    None => match self.lookup(&p.signature) {
                        Some(e) => e,
                        None => {
                            if let Some(&first) = first_seen.get(&p.signature) {
                                // The representative failed; report its error.
                                if let Some(Err(e)) = assembled.get(&first) {
                                    return Err(e.clone());
                                }
                            }
                            self.assemble(p, policy)?
                        }
                    },
                };
                Ok(Self::materialize(&entry, mesh, p.scale))
            })
            .collect()
    }

    /// Writes entries as JSON lines after a format header line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let inner = self.inner.lock().unwrap();
        let mut w = BufWriter::new(File::create(path)?);
        let header = serde_json::json!({ "format": FORMAT_TAG, "version": FORMAT_VERSION });
        writeln!(w, "{header}")?;
        // Least-recently used first so that reloading preserves recency order.
        for (signature, entry) in inner.entries.iter().rev() {
            let record = Record {
                signature: signature.clone(),
                reference_scale: entry.reference_scale,
                bcm: entry.bcm.clone(),
            };
            serde_json::to_writer(&mut w, &record).map_err(|e| Error::CacheFormat(e.to_string()))?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads entries written by [`BcmCache::save`] into this cache, validating each BCM.
    pub fn load(&self, path: &Path) -> Result<usize> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header: serde_json::Value = match lines.next() {
            Some(line) => serde_json::from_str(&line?).map_err(|e| Error::CacheFormat(e.to_string()))?,
            None => return Err(Error::CacheFormat("empty cache file".into())),
        };
        if header["format"] != FORMAT_TAG || header["version"] != FORMAT_VERSION {
            return Err(Error::CacheFormat(format!("unrecognized cache header {header}")));
        }
        let mut loaded = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)
                .map_err(|e| Error::CacheFormat(format!("record {}: {e}", k + 1)))?;
            record
                .bcm
                .validate()
                .map_err(|e| Error::CacheFormat(format!("record {}: {e}", k + 1)))?;
            if !(record.reference_scale > 0.0) || record.bcm.basis_policy_id != record.signature.basis_policy_id {
                return Err(Error::CacheFormat(format!("record {}: inconsistent metadata", k + 1)));
            }
            loaded.push(record);
        }
        let count = loaded.len();
        let mut inner = self.inner.lock().unwrap();
        for r in loaded {
            inner.entries.put(
                r.signature,
                Arc::new(CachedBcm {
                    reference_scale: r.reference_scale,
                    bcm: r.bcm,
                }),
            );
        }
        Ok(count)
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    signature: ShapeSignature,
    reference_scale: f64,
    bcm: Bcm,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_rect_mesh;

    fn square(a: f64, b: f64, w: f64) -> BoundaryMesh {
        build_rect_mesh(a, b, w, w, [1; 4], 0).unwrap()
    }

    #[test]
    fn scale_unit_square() {
        let bcm = compute_bcm(&square(0.0, 0.0, 1.0), BasisPolicy::Canonical, &AssemblyOptions::default()).unwrap();
        let half = scale_bcm(&bcm, 2.0).unwrap();
        assert!((half.matrix[(0, 0)] - 1.25).abs() < 1e-12);
        assert!((half.matrix[(0, 1)] + 0.75).abs() < 1e-12);
        assert!((half.matrix[(0, 2)] - 0.25).abs() < 1e-12);
        assert!((half.node_weights[0] - 2.0).abs() < 1e-15);
        assert_eq!(scale_bcm(&bcm, 1.0).unwrap(), bcm);
        let double = scale_bcm(&bcm, 0.5).unwrap();
        assert!((&double.matrix - &bcm.matrix * 2.0).amax() < 1e-14);
        assert!(matches!(scale_bcm(&bcm, 0.0), Err(Error::InvalidScale(_))));
        assert!(matches!(scale_bcm(&bcm, -1.0), Err(Error::InvalidScale(_))));
    }

    #[test]
    fn hit_rescales() {
        let cache = BcmCache::default();
        assert_eq!(cache.stats(), CacheStats::default());
        let a = cache.get_or_compute(&square(0.0, 0.0, 1.0), BasisPolicy::Canonical).unwrap();
        let b = cache.get_or_compute(&square(4.0, -9.0, 3.0), BasisPolicy::Canonical).unwrap();
        assert_eq!(cache.stats(), CacheStats { assemblies: 1, hits: 1, misses: 1 });
        assert!((&b.matrix - &a.matrix / 3.0).amax() < 1e-12);
        assert!((b.node_points[0].x - 5.5).abs() < 1e-12);
    }

    #[test]
    fn three_north_domains() {
        let cache = BcmCache::default();
        for (k, w) in [4.0, 2.0, 1.0].into_iter().enumerate() {
            let m = build_rect_mesh(k as f64, 0.0, w, w / 2.0, [2, 1, 2, 1], 0).unwrap();
            cache.get_or_compute(&m, BasisPolicy::Canonical).unwrap();
        }
        let s = cache.stats();
        assert_eq!((s.assemblies, s.hits, s.lookups()), (1, 2, 3));
    }

    #[test]
    fn different_shapes_miss() {
        let cache = BcmCache::default();
        cache.get_or_compute(&square(0.0, 0.0, 1.0), BasisPolicy::Canonical).unwrap();
        let rect = build_rect_mesh(0.0, 0.0, 2.0, 1.0, [1; 4], 0).unwrap();
        cache.get_or_compute(&rect, BasisPolicy::Canonical).unwrap();
        assert_eq!(cache.stats(), CacheStats { assemblies: 2, hits: 0, misses: 2 });
        cache.reset_stats();
        assert_eq!(cache.stats(), CacheStats::default());
    }

    #[test]
    fn passthrough_counts_every_lookup() {
        let cache = BcmCache::passthrough();
        for w in [1.0, 2.0, 3.0] {
            cache.get_or_compute(&square(0.0, 0.0, w), BasisPolicy::Canonical).unwrap();
        }
        assert_eq!(cache.stats(), CacheStats { assemblies: 3, hits: 0, misses: 3 });
        assert!(cache.is_empty());
    }

    #[test]
    fn batched_lookup_matches_sequential() {
        let meshes: Vec<BoundaryMesh> = (0..6)
            .map(|k| build_rect_mesh(k as f64, 0.0, 1.0 + (k % 3) as f64, 1.0, [2, 1, 2, 1], 0).unwrap())
            .collect();
        let refs: Vec<&BoundaryMesh> = meshes.iter().collect();
        let batched = BcmCache::default();
        let out = batched.get_or_compute_many(&refs, BasisPolicy::Canonical);
        let seq = BcmCache::default();
        for (m, r) in meshes.iter().zip(out) {
            let a = r.unwrap();
            let b = seq.get_or_compute(m, BasisPolicy::Canonical).unwrap();
            assert_eq!(a.matrix, b.matrix);
        }
        assert_eq!(batched.stats(), seq.stats());
        assert_eq!(batched.stats().assemblies, 3);
    }

    #[test]
    fn persistence_round_trip() {
        let cache = BcmCache::default();
        cache.get_or_compute(&square(0.0, 0.0, 1.0), BasisPolicy::Canonical).unwrap();
        cache
            .get_or_compute(&build_rect_mesh(0.0, 0.0, 2.0, 1.0, [2, 1, 2, 1], 0).unwrap(), BasisPolicy::Canonical)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        let fresh = BcmCache::default();
        assert_eq!(fresh.load(&path).unwrap(), 2);
        let got = fresh.get_or_compute(&square(3.0, 3.0, 2.0), BasisPolicy::Canonical).unwrap();
        assert_eq!(fresh.stats().assemblies, 0);
        assert!((got.matrix[(0, 0)] - 1.25).abs() < 1e-12);

        std::fs::write(&path, "{\"format\":\"other\",\"version\":1}\n").unwrap();
        assert!(matches!(fresh.load(&path), Err(Error::CacheFormat(_))));
    }

    #[test]
    fn load_rejects_broken_bcm() {
        let cache = BcmCache::default();
        cache.get_or_compute(&square(0.0, 0.0, 1.0), BasisPolicy::Canonical).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut record: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        // Perturb one matrix entry so the row-sum check fails.
        fn bump(v: &mut serde_json::Value) -> bool {
            match v {
                serde_json::Value::Number(n) if n.is_f64() => {
                    *v = serde_json::json!(n.as_f64().unwrap() + 1.0);
                    true
                }
                serde_json::Value::Array(items) => items.iter_mut().any(bump),
                serde_json::Value::Object(map) => map.values_mut().any(bump),
                _ => false,
            }
        }
        assert!(bump(&mut record["bcm"]["matrix"]));
        lines[1] = record.to_string();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(BcmCache::default().load(&path), Err(Error::CacheFormat(_))));
    }
}
