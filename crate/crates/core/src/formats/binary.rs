use crate::field::{GridGeometry, OccupancyBitfield, RadianceFieldGrid};

use super::{FormatError, FORMAT_VERSION};

pub const GRID_MAGIC: &[u8; 4] = b"MNLV";
pub const MASK_MAGIC: &[u8; 4] = b"MNLB";

const GRID_HEADER: usize = 4 + 4 + 12 + 12 + 4;
const MASK_HEADER: usize = 4 + 4 + 12;

pub fn encode_grid(grid: &RadianceFieldGrid) -> Vec<u8> {
    let g = grid.geometry();
    let mut out = Vec::with_capacity(GRID_HEADER + grid.voxels().len() * 16);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in g.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for c in g.origin.iter() {
        out.extend_from_slice(&(*c as f32).to_le_bytes());
    }
    out.extend_from_slice(&(g.voxel_size as f32).to_le_bytes());
    for v in grid.voxels() {
        for c in v {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<RadianceFieldGrid, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(GRID_MAGIC, GRID_HEADER)?;
    let dims = [r.u32() as usize, r.u32() as usize, r.u32() as usize];
    let origin = [r.f32() as f64, r.f32() as f64, r.f32() as f64];
    let voxel_size = r.f32() as f64;
    let count = checked_count(dims)?;
    let expected = count
        .checked_mul(16)
        .and_then(|n| n.checked_add(GRID_HEADER))
        .ok_or_else(|| FormatError::CorruptPayload(format!("dims {dims:?} overflow")))?;
    check_len(bytes.len(), expected)?;
    let geometry = GridGeometry::new(dims, origin, voxel_size)
        .map_err(|e| FormatError::CorruptPayload(e.to_string()))?;
    let mut voxels = Vec::with_capacity(count);
    for _ in 0..count {
        voxels.push([r.f32(), r.f32(), r.f32(), r.f32()]);
    }
    RadianceFieldGrid::from_voxels(geometry, voxels)
        .map_err(|e| FormatError::CorruptPayload(e.to_string()))
}

pub fn encode_mask(mask: &OccupancyBitfield) -> Vec<u8> {
    let mut out = Vec::with_capacity(MASK_HEADER + mask.as_bytes().len());
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in mask.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(mask.as_bytes());
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<OccupancyBitfield, FormatError> {
    let mut r = Reader::new(bytes);
    r.header(MASK_MAGIC, MASK_HEADER)?;
    let dims = [r.u32() as usize, r.u32() as usize, r.u32() as usize];
    let count = checked_count(dims)?;
    check_len(bytes.len(), MASK_HEADER + count.div_ceil(8))?;
    OccupancyBitfield::from_bytes(dims, bytes[MASK_HEADER..].to_vec())
        .map_err(|e| FormatError::CorruptPayload(e.to_string()))
}

fn checked_count(dims: [usize; 3]) -> Result<usize, FormatError> {
    if dims.contains(&0) {
        return Err(FormatError::CorruptPayload(format!("zero dimension in {dims:?}")));
    }
    dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| FormatError::CorruptPayload(format!("dims {dims:?} overflow")))
}

fn check_len(found: usize, expected: usize) -> Result<(), FormatError> {
    if found != expected {
        return Err(FormatError::CorruptPayload(format!(
            "expected {expected} bytes, found {found}"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    /// Checks magic, version and that the fixed header is present.
    fn header(&mut self, magic: &[u8; 4], header_len: usize) -> Result<(), FormatError> {
        if self.bytes.len() < 4 || &self.bytes[..4] != magic {
            return Err(FormatError::BadMagic {
                found: self.bytes.iter().take(4).copied().collect(),
            });
        }
        if self.bytes.len() < 8 {
            return Err(FormatError::CorruptPayload("truncated header".into()));
        }
        self.pos = 4;
        let version = self.u32();
        if version != FORMAT_VERSION {
            return Err(FormatError::VersionUnsupported {
                magic: String::from_utf8_lossy(magic).into_owned(),
                version,
            });
        }
        if self.bytes.len() < header_len {
            return Err(FormatError::CorruptPayload("truncated header".into()));
        }
        Ok(())
    }

    fn take4(&mut self) -> [u8; 4] {
        let b = self.bytes[self.pos..self.pos + 4].try_into().unwrap();
        self.pos += 4;
        b
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take4())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take4())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_grid() -> impl Strategy<Value = RadianceFieldGrid> {
        (1usize..6, 1usize..6, 1usize..6, -5.0f64..5.0, 0.01f64..2.0).prop_flat_map(
            |(h, w, l, o, vs)| {
                let n = h * w * l;
                prop::collection::vec((0.0f32..=1.0, 0.0f32..=1.0, 0.0f32..=1.0, 0.0f32..50.0), n)
                    .prop_map(move |vals| {
                        let g = GridGeometry::new([h, w, l], [o, -o, 0.5 * o], vs).unwrap();
                        let vox = vals.into_iter().map(|(r, gg, b, s)| [r, gg, b, s]).collect();
                        RadianceFieldGrid::from_voxels(g, vox).unwrap()
                    })
            },
        )
    }

    proptest! {
        #[test]
        fn grid_round_trip_is_bit_exact(grid in arb_grid()) {
            let bytes = encode_grid(&grid);
            let back = decode_grid(&bytes).unwrap();
            prop_assert_eq!(encode_grid(&back), bytes);
            prop_assert_eq!(back.geometry(), grid.geometry());
        }

        #[test]
        fn mask_round_trip_is_bit_exact(
            dims in (1usize..9, 1usize..9, 1usize..9),
            seed in prop::collection::vec(any::<bool>(), 512),
        ) {
            let dims = [dims.0, dims.1, dims.2];
            let mut m = OccupancyBitfield::empty(dims);
            for i in 0..m.len() { m.set(i, seed[i % seed.len()]); }
            let bytes = encode_mask(&m);
            let back = decode_mask(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode_mask(&back), bytes);
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let g = GridGeometry::new([1, 1, 2], [1.0, 2.0, 3.0], 0.5).unwrap();
        let grid = RadianceFieldGrid::from_voxels(g, vec![[1.0, 0.0, 0.0, 2.0], [0.0; 4]]).unwrap();
        let b = encode_grid(&grid);
        assert_eq!(&b[..4], b"MNLV");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..20], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&b[32..36], &0.5f32.to_le_bytes());
        assert_eq!(&b[36..40], &1.0f32.to_le_bytes());
        assert_eq!(&b[48..52], &2.0f32.to_le_bytes());
        assert_eq!(b.len(), 36 + 32);
    }

    #[test]
    fn truncation_is_corrupt_payload() {
        let g = GridGeometry::new([2, 2, 2], [0.0; 3], 1.0).unwrap();
        let bytes = encode_grid(&RadianceFieldGrid::new(g));
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_grid(cut), Err(FormatError::CorruptPayload(_))));
        let m = encode_mask(&OccupancyBitfield::full([3, 3, 3]));
        assert!(matches!(decode_mask(&m[..m.len() - 1]), Err(FormatError::CorruptPayload(_))));
        assert!(matches!(decode_mask(&m[..10]), Err(FormatError::CorruptPayload(_))));
    }

    #[test]
    fn future_version_rejected() {
        let mut m = encode_mask(&OccupancyBitfield::full([2, 2, 2]));
        m[4] = 2;
        assert!(matches!(
            decode_mask(&m),
            Err(FormatError::VersionUnsupported { version: 2, .. })
        ));
    }

    #[test]
    fn invalid_payload_values_rejected() {
        let g = GridGeometry::new([1, 1, 1], [0.0; 3], 1.0).unwrap();
        let mut b = encode_grid(&RadianceFieldGrid::new(g));
        b[48..52].copy_from_slice(&(-1.0f32).to_le_bytes());
        assert!(matches!(decode_grid(&b), Err(FormatError::CorruptPayload(_))));
    }
}
