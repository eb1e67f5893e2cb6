//! Real-time matching of geo-tagged questions to nearby candidates, built
//! from filter, splitter and dehydrator stages.

pub mod decide;
pub mod geo;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod ratelimit;

pub use decide::{business_decide, Decision, GeoConfig, GeoState, Verdict};
pub use geo::{cap_bounds, haversine_m, DegreeRect, LatLon, EARTH_RADIUS_M};
pub use index::{classify, CandidateHit, GeoIndex, Matches, QuestionHit, RTreeGeoIndex, Upsert};
pub use model::{ActionEvent, ActionKind, CandidateLocation, GeoEvent, GeoId, Question};
pub use pipeline::{geo_envelope, ActionLog, GeoPipeline, SharedIndex, REFERENCE_TOPOLOGY};
pub use ratelimit::{max_in_window, RateLimit, RateLimiterState};
