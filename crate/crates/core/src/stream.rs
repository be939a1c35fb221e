//! Per-cell operator records and their byte-stream form.
//!
//! A record stores hierarchical surpluses: the element matrix relative to
//! its single-sample rediscretisation and, for refined cells, the
//! prolongation block relative to bilinear weights. The decoded matrices are
//! cached next to the bytes so readers never decode on the hot path.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::RwLock;

use crate::assembly::{integrate_element, CellGeom, ElementMatrix, P1};
use crate::codec;
use crate::error::{Error, Result};
use crate::mesh::{CellId, Mesh};
use crate::problem::MaterialField;
use crate::transfer::{geometric_prolongation, TransferBlock};

/// Magic prefix of persisted streams.
pub const STREAM_MAGIC: [u8; 4] = *b"LMG1";

/// Uncompressed size of one element matrix in bytes.
pub const UNCOMPRESSED_BYTES: usize = 128;

const HEADER_TRANSFER: u8 = 0x80;
const HEADER_P2: u8 = 0x10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecisionPolicy {
    /// Choose the precision from scratch for every new payload.
    Fresh,
    /// Never drop below the precision previously used for the cell.
    Ratchet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    pub threshold: f64,
    pub policy: PrecisionPolicy,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { threshold: 1e-8, policy: PrecisionPolicy::Fresh }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub p1: P1,
    pub p3: u8,
    /// Samples per axis behind the element matrix (leaf cells).
    pub n: u32,
    pub refined: bool,
    /// Decoded element matrix as seen by the solver.
    pub a: ElementMatrix,
    /// Decoded prolongation block, refined cells only.
    pub p: Option<TransferBlock>,
    pub payload: Vec<u8>,
    /// Global publication counter value.
    pub version: u64,
    /// Largest input version consumed by the last coarse recompute.
    pub inputs_seen: u64,
    /// Coarse operator invalidated by a refinement below it.
    pub stale: bool,
    pub checksum: u64,
}

fn checksum_of(a: &ElementMatrix, p: Option<&TransferBlock>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut mix = |v: f64| {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    a.iter().copied().for_each(&mut mix);
    if let Some(p) = p {
        p.iter().copied().for_each(&mut mix);
    }
    h
}

/// Surplus entries in stream order: the 16 matrix entries row by row, then
/// for refined cells the 64 transfer entries row by row.
fn surplus(a: &ElementMatrix, base: &ElementMatrix, p: Option<&TransferBlock>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(80);
    for r in 0..4 {
        for c in 0..4 {
            out.push(a[(r, c)] - base[(r, c)]);
        }
    }
    if let Some(p) = p {
        let g = geometric_prolongation();
        for r in 0..16 {
            for c in 0..4 {
                out.push(p[(r, c)] - g[(r, c)]);
            }
        }
    }
    out
}

fn rebuild(base: &ElementMatrix, refined: bool, entries: &[f64]) -> (ElementMatrix, Option<TransferBlock>) {
    let a = ElementMatrix::from_fn(|r, c| base[(r, c)] + entries[4 * r + c]);
    let p = refined.then(|| {
        let g = geometric_prolongation();
        TransferBlock::from_fn(|r, c| g[(r, c)] + entries[16 + 4 * r + c])
    });
    (a, p)
}

impl CellRecord {
    /// Record of a cell whose operator was never computed.
    pub fn bottom(geom: CellGeom, material: &MaterialField, refined: bool) -> Self {
        let a = integrate_element(geom, material, 1);
        let p = refined.then(geometric_prolongation);
        CellRecord {
            p1: P1::Bottom,
            p3: 0,
            n: 0,
            refined,
            checksum: checksum_of(&a, p.as_ref()),
            a,
            p,
            payload: Vec::new(),
            version: 0,
            inputs_seen: 0,
            stale: false,
        }
    }

    /// Encodes `a` (and `p` for refined cells) as surpluses. The stored
    /// matrices are the decoded values, so codec error is absorbed here.
    #[allow(clippy::too_many_arguments)]
    pub fn encode(
        p1: P1,
        n: u32,
        a: &ElementMatrix,
        p: Option<&TransferBlock>,
        geom: CellGeom,
        material: &MaterialField,
        codec_cfg: CodecConfig,
        floor: u8,
    ) -> Result<Self> {
        let base = integrate_element(geom, material, 1);
        let values = surplus(a, &base, p);
        let floor = match codec_cfg.policy {
            PrecisionPolicy::Fresh => 0,
            PrecisionPolicy::Ratchet => floor,
        };
        let p3 = codec::choose_precision(&values, codec_cfg.threshold, floor)?;
        let mut payload = Vec::with_capacity(values.len() * usize::from(p3));
        for &v in &values {
            codec::encode_into(v, p3, &mut payload)?;
        }
        let decoded = decode_entries(&payload, p3, values.len())?;
        let (a, p) = rebuild(&base, p.is_some(), &decoded);
        Ok(CellRecord {
            p1,
            p3,
            n,
            refined: p.is_some(),
            checksum: checksum_of(&a, p.as_ref()),
            a,
            p,
            payload,
            version: 0,
            inputs_seen: 0,
            stale: false,
        })
    }

    pub fn entry_count(&self) -> usize {
        if self.refined {
            80
        } else {
            16
        }
    }

    /// Bytes of this record in the stream.
    pub fn byte_len(&self) -> usize {
        1 + self.payload.len()
    }

    pub fn header(&self, p2: bool) -> u8 {
        let class = match self.p1 {
            P1::Bottom => 0u8,
            P1::N(_) => 1,
            P1::Top => 2,
        };
        let mut h = (class << 5) | self.p3;
        if self.refined {
            h |= HEADER_TRANSFER;
        }
        if p2 {
            h |= HEADER_P2;
        }
        h
    }

    pub fn checksum_ok(&self) -> bool {
        self.checksum == checksum_of(&self.a, self.p.as_ref())
    }

    /// Transfer block, bilinear when nothing was stored.
    pub fn transfer(&self) -> TransferBlock {
        self.p.unwrap_or_else(geometric_prolongation)
    }
}

fn decode_entries(payload: &[u8], p3: u8, count: usize) -> Result<Vec<f64>> {
    if p3 == 0 {
        return Ok(vec![0.0; count]);
    }
    let w = usize::from(p3);
    if payload.len() != w * count {
        return Err(Error::Corrupt(format!(
            "payload of {} bytes does not hold {count} entries of {p3} bytes",
            payload.len()
        )));
    }
    payload.chunks(w).map(|c| codec::decode_value(c, p3)).collect()
}

/// Decoded view of one record read back from bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedRecord {
    /// 0 = bottom, 1 = numeric, 2 = top.
    pub p1_class: u8,
    pub p2: bool,
    pub p3: u8,
    pub a: ElementMatrix,
    pub p: Option<TransferBlock>,
}

/// Parses one record at the start of `bytes`, returning it and its length.
pub fn read_cell_record(
    bytes: &[u8],
    geom: CellGeom,
    material: &MaterialField,
) -> Result<(DecodedRecord, usize)> {
    let &h = bytes.first().ok_or_else(|| Error::Corrupt("missing record header".into()))?;
    let refined = h & HEADER_TRANSFER != 0;
    let p1_class = (h >> 5) & 0b11;
    let p3 = h & 0x0f;
    if p1_class == 3 {
        return Err(Error::Corrupt(format!("invalid marker class in header {h:#04x}")));
    }
    if p3 == 1 || p3 > 8 || (p1_class == 0 && p3 != 0) {
        return Err(Error::Corrupt(format!("invalid precision in header {h:#04x}")));
    }
    let count = if refined { 80 } else { 16 };
    let len = usize::from(p3) * count;
    let payload = bytes
        .get(1..1 + len)
        .ok_or_else(|| Error::Corrupt("record payload truncated".into()))?;
    let entries = decode_entries(payload, p3, count)?;
    let base = integrate_element(geom, material, 1);
    let (a, p) = rebuild(&base, refined, &entries);
    Ok((DecodedRecord { p1_class, p2: h & HEADER_P2 != 0, p3, a, p }, 1 + len))
}

/// Storage of one cell: its published record and the in-flight flag.
#[derive(Debug)]
pub struct Slot {
    record: ArcSwap<CellRecord>,
    in_flight: AtomicBool,
}

impl Slot {
    fn new(r: CellRecord) -> Self {
        Self { record: ArcSwap::from_pointee(r), in_flight: AtomicBool::new(false) }
    }

    pub fn load(&self) -> Arc<CellRecord> {
        self.record.load_full()
    }

    /// Atomically claims the in-flight flag; `true` if this caller won.
    pub fn try_claim(&self) -> bool {
        self.in_flight
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    pub fn release(&self) {
        self.in_flight.store(false, Ordering::Release);
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight.load(Ordering::Acquire)
    }
}

/// All cell records, indexed by cell id.
#[derive(Debug)]
pub struct OperatorStore {
    slots: RwLock<Vec<Arc<Slot>>>,
    versions: AtomicU64,
    pub material: MaterialField,
    pub codec: CodecConfig,
}

impl OperatorStore {
    pub fn new(mesh: &Mesh, material: MaterialField, codec: CodecConfig) -> Self {
        let store = OperatorStore {
            slots: RwLock::new(Vec::new()),
            versions: AtomicU64::new(0),
            material,
            codec,
        };
        store.sync_with(mesh);
        store
    }

    /// Adds bottom records for cells created since the last call.
    pub fn sync_with(&self, mesh: &Mesh) {
        let mut slots = self.slots.write();
        for id in slots.len()..mesh.cells.len() {
            let c = mesh.cell(id);
            slots.push(Arc::new(Slot::new(CellRecord::bottom(
                CellGeom::of(c),
                &self.material,
                c.is_refined(),
            ))));
        }
    }

    pub fn len(&self) -> usize {
        self.slots.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot(&self, id: CellId) -> Arc<Slot> {
        Arc::clone(&self.slots.read()[id])
    }

    pub fn load(&self, id: CellId) -> Arc<CellRecord> {
        self.slots.read()[id].load()
    }

    /// Snapshot of all records.
    pub fn snapshot(&self) -> Vec<Arc<CellRecord>> {
        self.slots.read().iter().map(|s| s.load()).collect()
    }

    pub fn next_version(&self) -> u64 {
        self.versions.fetch_add(1, Ordering::AcqRel) + 1
    }

    pub fn current_version(&self) -> u64 {
        self.versions.load(Ordering::Acquire)
    }

    /// Publishes `rec` unconditionally with a fresh version.
    pub fn publish(&self, id: CellId, mut rec: CellRecord) -> Arc<CellRecord> {
        rec.version = self.next_version();
        let rec = Arc::new(rec);
        self.slots.read()[id].record.store(Arc::clone(&rec));
        rec
    }

    /// Publishes `rec` only if the slot still holds `expected`. Returns
    /// `false` when another writer got there first.
    pub fn publish_if(&self, slot: &Slot, expected: &Arc<CellRecord>, mut rec: CellRecord) -> bool {
        rec.version = self.next_version();
        let prev = slot.record.compare_and_swap(expected, Arc::new(rec));
        Arc::ptr_eq(&prev, expected)
    }

    /// Rewrites bookkeeping fields of a record without touching its operator
    /// data or version.
    pub fn update_meta(&self, id: CellId, f: impl Fn(&mut CellRecord)) {
        let slot = self.slot(id);
        slot.record.rcu(|cur| {
            let mut r = CellRecord::clone(cur);
            f(&mut r);
            r
        });
    }

    /// Serialises all records in traversal order behind the magic prefix.
    pub fn write_stream(&self, mesh: &Mesh) -> Vec<u8> {
        let mut out = STREAM_MAGIC.to_vec();
        let slots = self.slots.read();
        for &id in mesh.traverse() {
            let r = slots[id].load();
            out.push(r.header(slots[id].in_flight()));
            out.extend_from_slice(&r.payload);
        }
        out
    }

    /// Compression statistics over the leaf cells of `mesh`.
    pub fn compression_stats(&self, mesh: &Mesh) -> CompressionStats {
        let records: Vec<Arc<CellRecord>> = mesh.leaves().map(|id| self.load(id)).collect();
        CompressionStats::from_records(records.iter().map(|r| r.as_ref()))
    }
}

/// Parses a persisted stream against the mesh that wrote it.
pub fn read_stream(bytes: &[u8], mesh: &Mesh, material: &MaterialField) -> Result<Vec<DecodedRecord>> {
    if bytes.len() < 4 || bytes[..4] != STREAM_MAGIC {
        return Err(Error::Corrupt("bad stream magic".into()));
    }
    let mut pos = 4;
    let mut out = Vec::with_capacity(mesh.traverse().len());
    for &id in mesh.traverse() {
        let (rec, len) = read_cell_record(&bytes[pos..], CellGeom::of(mesh.cell(id)), material)?;
        if rec.p.is_some() != mesh.cell(id).is_refined() {
            return Err(Error::Corrupt(format!("record {id} disagrees with the mesh")));
        }
        out.push(rec);
        pos += len;
    }
    if pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompressionStats {
    pub cells: usize,
    pub stored_bytes: usize,
    pub uncompressed_bytes: usize,
    /// Total uncompressed over total stored bytes.
    pub factor_total: f64,
    /// Mean over cells of per-cell factors.
    pub factor_mean: f64,
    /// Cells per precision, indexed by `p3`.
    pub p3_histogram: [usize; 9],
    pub max_n: u32,
    pub avg_n: f64,
}

impl CompressionStats {
    pub fn from_records<'a>(records: impl Iterator<Item = &'a CellRecord>) -> Self {
        let mut s = CompressionStats::default();
        let mut ratio_sum = 0.0;
        let mut n_sum = 0u64;
        for r in records {
            s.cells += 1;
            s.stored_bytes += r.byte_len();
            s.uncompressed_bytes += UNCOMPRESSED_BYTES;
            ratio_sum += UNCOMPRESSED_BYTES as f64 / r.byte_len() as f64;
            s.p3_histogram[usize::from(r.p3)] += 1;
            s.max_n = s.max_n.max(r.n);
            n_sum += u64::from(r.n);
        }
        if s.cells > 0 {
            s.factor_total = s.uncompressed_bytes as f64 / s.stored_bytes as f64;
            s.factor_mean = ratio_sum / s.cells as f64;
            s.avg_n = n_sum as f64 / s.cells as f64;
        }
        s
    }
}
