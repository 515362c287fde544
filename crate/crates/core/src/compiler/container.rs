//! Compiled-layer container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0      8 bytes   magic "DBPIMCL\0"
//! 8      u32       format version (1)
//! 12     u32       header length H
//! 16     H bytes   UTF-8 JSON header
//! 16+H   sections, back to back, in the order listed by the header
//! ```
//!
//! The header carries the layer id, kind, architecture, dims, thresholds,
//! placement, tile plan, epilogue and a `sections` list of
//! `{name, offset, length}` with offsets relative to the first section byte.
//!
//! Sections:
//! - `cells`: one byte per cell (bit 0 Q, bit 1 valid), images ordered
//!   `[n_tile][k_tile][core_slot]`, each `[compartment][row][column]`.
//! - `meta`: same order, one byte per cell (bit 0 sign, bits 2..1 block index).
//! - `routing`: per placement group, `ceil(K / 8)` bytes, row `k` at bit
//!   `k % 8` of byte `k / 8`.
//! - `instructions`: one u64 word per instruction (see [`crate::compiler::isa`]).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::compiler::isa::{validate_stream, Instruction, LayerKind};
use crate::compiler::pack::{CompiledLayer, DyadicCell, MacroImage};
use crate::compiler::placement::Placement;
use crate::compiler::tiling::{RoutingMask, TilePlan};
use crate::error::{Error, Result};
use crate::sim::simd::SimdOp;
use crate::sparsify::ThresholdVector;

pub const MAGIC: &[u8; 8] = b"DBPIMCL\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    name: String,
    offset: usize,
    length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    layer_id: String,
    kind: LayerKind,
    arch: ArchConfig,
    m: usize,
    n: usize,
    k: usize,
    thresholds: ThresholdVector,
    placement: Placement,
    plan: TilePlan,
    epilogue: Vec<SimdOp>,
    sections: Vec<Section>,
}

pub fn encode_layer(layer: &CompiledLayer) -> Result<Vec<u8>> {
    let images = layer.images.iter().flatten().flatten();
    let cells: Vec<u8> = images.clone().flat_map(|i| i.cells.iter().map(DyadicCell::cell_byte)).collect();
    let meta: Vec<u8> = images.flat_map(|i| i.cells.iter().map(DyadicCell::meta_byte)).collect();
    let mut routing = Vec::new();
    for r in &layer.routing {
        let mut bytes = vec![0u8; r.len().div_ceil(8)];
        for (k, &b) in r.bits.iter().enumerate() {
            if b {
                bytes[k / 8] |= 1 << (k % 8);
            }
        }
        routing.extend(bytes);
    }
    let instructions: Vec<u8> = layer.instructions.iter().flat_map(|i| i.encode().to_le_bytes()).collect();

    let mut sections = Vec::new();
    let mut offset = 0;
    for (name, data) in [("cells", &cells), ("meta", &meta), ("routing", &routing), ("instructions", &instructions)] {
        sections.push(Section { name: name.into(), offset, length: data.len() });
        offset += data.len();
    }
    let header = Header {
        layer_id: layer.layer_id.clone(),
        kind: layer.kind,
        arch: layer.arch,
        m: layer.m,
        n: layer.n,
        k: layer.k,
        thresholds: layer.thresholds.clone(),
        placement: layer.placement.clone(),
        plan: layer.plan.clone(),
        epilogue: layer.epilogue.clone(),
        sections,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for data in [cells, meta, routing, instructions] {
        out.extend_from_slice(&data);
    }
    Ok(out)
}

fn check_placement(h: &Header) -> Result<()> {
    if h.thresholds.len() != h.n || h.placement.n != h.n {
        return Err(Error::Format("placement or thresholds do not cover N filters".into()));
    }
    for g in &h.placement.groups {
        if g.widths.len() != g.filters.len() || g.occupied_columns() > h.arch.columns_per_macro {
            return Err(Error::Format(format!("group {:?} does not fit one macro", g.filters)));
        }
        if g.filters.iter().zip(&g.widths).any(|(&f, &w)| f >= h.n || w == 0 || h.thresholds.get(f) as usize != w) {
            return Err(Error::Format(format!("group {:?} widths disagree with the thresholds", g.filters)));
        }
        if !h.arch.mixed_threshold_macros && g.widths.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Format(format!(
                "group {:?} mixes thresholds but the architecture disallows it",
                g.filters
            )));
        }
    }
    Ok(())
}

pub fn decode_layer(bytes: &[u8]) -> Result<CompiledLayer> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a compiled-layer container".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body_start = 16 + hlen;
    if bytes.len() < body_start {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..body_start])?;
    header.arch.validate()?;
    check_placement(&header)?;
    let body = &bytes[body_start..];
    let section = |name: &str| -> Result<&[u8]> {
        let s = header
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("missing section {name}")))?;
        body.get(s.offset..s.offset + s.length)
            .ok_or_else(|| Error::Format(format!("section {name} runs past the end of the file")))
    };

    let cells = section("cells")?;
    let meta = section("meta")?;
    let per_image = header.arch.cells_per_macro();
    let image_count: usize = header.plan.n_tiles.iter().map(|t| t.k_tiles.len() * t.groups.len()).sum();
    if cells.len() != image_count * per_image || meta.len() != cells.len() {
        return Err(Error::Format(format!(
            "expected {} cell bytes for {image_count} images, found {} / {}",
            image_count * per_image,
            cells.len(),
            meta.len()
        )));
    }
    let mut next = 0;
    let mut images = Vec::with_capacity(header.plan.n_tiles.len());
    for nt in &header.plan.n_tiles {
        let mut per_k = Vec::new();
        for _ in &nt.k_tiles {
            let mut per_slot = Vec::new();
            for _ in &nt.groups {
                let mut image = MacroImage::empty(&header.arch);
                for (i, cell) in image.cells.iter_mut().enumerate() {
                    *cell = DyadicCell::from_bytes(cells[next + i], meta[next + i])?;
                }
                next += per_image;
                per_slot.push(image);
            }
            per_k.push(per_slot);
        }
        images.push(per_k);
    }

    let routing_bytes = section("routing")?;
    let stride = header.k.div_ceil(8);
    if routing_bytes.len() != stride * header.placement.groups.len() {
        return Err(Error::Format("routing section size does not match the placement".into()));
    }
    let routing = routing_bytes
        .chunks(stride.max(1))
        .take(header.placement.groups.len())
        .map(|chunk| RoutingMask { bits: (0..header.k).map(|k| chunk[k / 8] >> (k % 8) & 1 == 1).collect() })
        .collect();

    let words = section("instructions")?;
    if words.len() % 8 != 0 {
        return Err(Error::Format("instruction section is not a whole number of words".into()));
    }
    let instructions = words
        .chunks_exact(8)
        .map(|w| Instruction::decode(u64::from_le_bytes(w.try_into().unwrap())))
        .collect::<Result<Vec<_>>>()?;
    validate_stream(&instructions)?;

    Ok(CompiledLayer {
        layer_id: header.layer_id,
        kind: header.kind,
        arch: header.arch,
        m: header.m,
        n: header.n,
        k: header.k,
        thresholds: header.thresholds,
        placement: header.placement,
        routing,
        plan: header.plan,
        images,
        instructions,
        epilogue: header.epilogue,
    })
}

pub fn write_layer(path: &Path, layer: &CompiledLayer) -> Result<()> {
    let bytes = encode_layer(layer)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_layer(path: &Path) -> Result<CompiledLayer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_layer(&bytes)
}

/// Human-readable listing: header, placement, routing, plan and
/// instructions; `cells` adds every macro image, one line per cell row with
/// `.` for invalid cells and the signed stored value otherwise.
pub fn listing(layer: &CompiledLayer, cells: bool) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "layer {} ({:?})  m={} k={} n={}", layer.layer_id, layer.kind, layer.m, layer.k, layer.n);
    let _ = writeln!(s, "thresholds histogram [0,1,2] = {:?}", layer.thresholds.histogram());
    let _ = writeln!(s, "zero filters: {:?}", layer.placement.zero_filters);
    let _ = writeln!(s, "groups ({}):", layer.placement.groups.len());
    for (g, group) in layer.placement.groups.iter().enumerate() {
        let _ = writeln!(
            s,
            "  g{g:<4} filters {:?} widths {:?} routed rows {}/{}",
            group.filters,
            group.widths,
            layer.routing[g].active(),
            layer.routing[g].len()
        );
    }
    let _ = writeln!(s, "m tiles: {}  rows per tile: {}", layer.plan.m_tiles, layer.plan.rows_per_tile);
    for (ni, nt) in layer.plan.n_tiles.iter().enumerate() {
        let passes: Vec<usize> = nt.k_tiles.iter().map(|t| t.row_passes).collect();
        let _ = writeln!(s, "  n tile {ni}: groups {:?} row passes per k tile {passes:?}", nt.groups);
    }
    let _ = writeln!(s, "instructions ({}):", layer.instructions.len());
    for (i, ins) in layer.instructions.iter().enumerate() {
        let _ = writeln!(s, "  {i:6}  {:016x}  {ins}", ins.encode());
    }
    if cells {
        for (ni, per_k) in layer.images.iter().enumerate() {
            for (ki, per_slot) in per_k.iter().enumerate() {
                for (slot, img) in per_slot.iter().enumerate() {
                    let _ = writeln!(s, "image n={ni} k={ki} slot={slot}");
                    for row in 0..img.rows {
                        for c in 0..img.compartments {
                            let _ = write!(s, "  r{row:02} c{c:02} ");
                            for col in 0..img.columns {
                                let cell = img.get(c, row, col);
                                if cell.valid {
                                    let _ = write!(s, "{:>5}", format!("{:+}", cell.value()));
                                } else {
                                    let _ = write!(s, "{:>5}", ".");
                                }
                            }
                            s.push('\n');
                        }
                    }
                }
            }
        }
    }
    s
}
