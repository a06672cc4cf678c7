//! Multi-to-one rain data: the pair type, synthetic rain, procedural
//! backgrounds, the on-disk layout and shared augmentation.

mod augment;
mod background;
mod io;
mod pair;
mod rain;

pub use augment::{augment, resize_pair, Augment};
pub use background::procedural_background;
pub use io::{load_dataset, read_png, write_dataset, write_png, Manifest};
pub use pair::{DatasetSplit, MultiToOnePair, Severity};
pub use rain::{generate_rain, make_pair, synthesize_split, RainConfig};
