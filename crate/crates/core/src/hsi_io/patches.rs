use super::{HsiCube, HsiError, Label, LabelMask};

/// One labelled pixel of a [`PatchSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRef {
    pub row: usize,
    pub col: usize,
    /// 0 unchanged, 1 changed.
    pub label: u8,
}

/// Patches centred on every labelled pixel, borrowed from their cube.
///
/// Patch values are materialised on demand with mirror reflection at the
/// borders, so the set itself is only a list of centres.
#[derive(Debug, Clone)]
pub struct PatchSet<'a> {
    cube: &'a HsiCube,
    size: usize,
    entries: Vec<PatchRef>,
}

impl<'a> PatchSet<'a> {
    pub fn cube(&self) -> &'a HsiCube {
        self.cube
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[PatchRef] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `B×s×s` values of patch `i`, band-major.
    pub fn patch(&self, i: usize) -> Vec<f32> {
        let e = self.entries[i];
        extract_patch(self.cube, e.row, e.col, self.size)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

/// Reflect-101 indexing: `-1 → 1`, `n → n − 2`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// The `B×s×s` neighbourhood of `(row, col)` with mirrored borders.
pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, size: usize) -> Vec<f32> {
    let r = (size / 2) as isize;
    let (h, w) = (cube.height(), cube.width());
    let rows: Vec<usize> = (-r..=r).map(|d| reflect(row as isize + d, h)).collect();
    let cols: Vec<usize> = (-r..=r).map(|d| reflect(col as isize + d, w)).collect();
    let mut out = Vec::with_capacity(cube.bands() * size * size);
    for b in 0..cube.bands() {
        let band = cube.band(b);
        for &y in &rows {
            out.extend(cols.iter().map(|&x| band[y * w + x]));
        }
    }
    out
}

/// One patch per labelled (non-2) pixel, in raster order.
pub fn extract_patches<'a>(
    cube: &'a HsiCube,
    labels: &LabelMask,
    size: usize,
) -> Result<PatchSet<'a>, HsiError> {
    if labels.height() != cube.height() || labels.width() != cube.width() {
        return Err(HsiError::ShapeMismatch {
            left: vec![cube.height(), cube.width()],
            right: vec![labels.height(), labels.width()],
        });
    }
    let limit = cube.height().min(cube.width());
    if size.is_multiple_of(2) || size > limit {
        return Err(HsiError::InvalidPatchSize { size, limit });
    }
    let mut entries = Vec::new();
    for row in 0..cube.height() {
        for col in 0..cube.width() {
            if let Some(label) = labels.get(row, col).class() {
                entries.push(PatchRef { row, col, label });
            }
        }
    }
    if entries.is_empty() {
        log::warn!("label mask has no labelled pixels; dataset is empty");
    }
    debug_assert!(entries.iter().all(|e| e.label != Label::Unlabeled as u8));
    Ok(PatchSet {
        cube,
        size,
        entries,
    })
}
