//! On-disk formats (volumes, boundary annotations, split manifests), 2.5D
//! slice windows and class maps derived from boundaries.

mod annotation;
mod split;
mod volume;

use std::path::{Path, PathBuf};

pub use annotation::{
    mask_from_boundaries, read_annotations, read_annotations_from, surface_index, write_annotations, BoundarySet,
    N_SURFACES, SURFACE_NAMES,
};
pub use split::SplitManifest;
pub use volume::{read_volume, read_volume_from, write_volume, write_volume_to, Dtype, Volume, HEADER_LEN, VOLUME_MAGIC};

use crate::error::{Error, Result};

/// Slice indices of the `n`-slice window centered on `center`; indices past
/// either end repeat the edge slice.
pub fn window_indices(slices: usize, center: usize, n: usize) -> Result<Vec<usize>> {
    if n % 2 == 0 {
        return Err(Error::InvalidArgument(format!("window size must be odd, got {n}")));
    }
    if center >= slices {
        return Err(Error::InvalidArgument(format!("center {center} outside a {slices}-slice volume")));
    }
    if n >= 2 * slices {
        return Err(Error::InvalidArgument(format!("window of {n} slices on a {slices}-slice volume")));
    }
    let half = (n / 2) as isize;
    Ok((-half..=half)
        .map(|d| (center as isize + d).clamp(0, slices as isize - 1) as usize)
        .collect())
}

/// The `n` slices around `center` as flat `[H][W]` images.
pub fn window_slices(vol: &Volume, center: usize, n: usize) -> Result<Vec<&[f32]>> {
    Ok(window_indices(vol.slices, center, n)?
        .into_iter()
        .map(|j| vol.slice(j))
        .collect())
}

/// File locations of volume `id` inside a dataset directory.
pub fn volume_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.octvol"))
}

pub fn annotation_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.csv"))
}

pub fn split_path(dir: &Path) -> PathBuf {
    dir.join("split.txt")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_interior_edges_and_degenerate() {
        assert_eq!(window_indices(10, 4, 3).unwrap(), [3, 4, 5]);
        assert_eq!(window_indices(10, 0, 3).unwrap(), [0, 0, 1]);
        assert_eq!(window_indices(10, 9, 5).unwrap(), [7, 8, 9, 9, 9]);
        assert_eq!(window_indices(10, 6, 1).unwrap(), [6]);
        assert!(window_indices(10, 3, 4).is_err());
        assert!(window_indices(10, 10, 3).is_err());
        assert!(window_indices(2, 0, 5).is_err());
        assert_eq!(window_indices(2, 0, 3).unwrap(), [0, 0, 1]);
    }

    #[test]
    fn window_returns_slice_data() {
        let vol = Volume::new(3, 2, 2, (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let w = window_slices(&vol, 2, 3).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[2], vol.slice(2));
        assert_eq!(w[1], vol.slice(2));
        assert_eq!(w[0], vol.slice(1));
    }
}
