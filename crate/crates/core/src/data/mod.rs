//! Synthetic paired-dose data: phantom volumes, acquisition simulation,
//! normalization, patch sampling, and the PVOL file format.

mod dataset;
mod phantom;
mod volume;

pub use dataset::{
    cut_patch, derive_seed, extract_patches, normalization_scale, normalize_pair, denormalize,
    patches_per_pair, sample_coords, train_test_split, PatchPair, VolumePair,
};
pub use phantom::{
    generate_phantom, simulate_acquisition, AcqParams, Ellipsoid, LesionSpec, Organ,
    PhantomSpec, TextureSpec,
};
pub use volume::{
    from_bytes, read_volume, to_bytes, write_volume, Volume, CLINICAL_SPACING, PVOL_VERSION,
};
