//! Event-camera data handling: `EVT1` files, timelines and annotations, PGM/PPM images,
//! a synthetic scene simulator and multi-range event frames.

pub mod event_io;
pub mod event_repr;
pub mod kv;
pub mod pnm;
pub mod scenegen;

pub use event_io::{AnnotationBox, Annotations, BBox, Event, EventIoError, EventStream, FrameRecord, Polarity};
pub use event_repr::{EventFrame, MultiRangeStack, RangeSpec, ReprError};
pub use pnm::Image;
pub use scenegen::{GroundTruthSequence, Illumination, Scene, SceneConfig, SceneError, SceneObject};
