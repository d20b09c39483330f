pub mod affect_space;
pub mod experiments;
pub mod llm_client;
pub mod metrics;
pub mod occ_engine;
pub mod par;
pub mod prompt_kit;
pub mod stimuli;
