//! Synthetic federations with separately controlled style and content shift.

mod federation;
mod persist;
mod profile;
mod render;

pub use federation::{
    make_client, make_federation, split_indices, split_sizes, ClientDataset, Federation, FederationSpec, Split,
    Targets, Task,
};
pub use persist::{load_federation, persist_federation, MANIFEST_FILE};
pub use profile::{ContentParams, ShiftProfile, StyleParams};
pub use render::{pattern_for_label, render_cls_clean, render_seg_clean, style_transform, CleanRender, Pattern, ShapeFamily};
