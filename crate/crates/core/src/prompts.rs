//! Prompt templates shipped as resource files.

macro_rules! resource {
    ($name:ident, $path:literal) => {
        pub const $name: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/resources/", $path));
    };
}

resource!(INCONTEXT_SYSTEM, "prompts/incontext_system.txt");
resource!(INCONTEXT_USER, "prompts/incontext_user.txt");
resource!(ATTR_SELECT, "prompts/attr_select.txt");
resource!(ATTR_CLUSTER, "prompts/attr_cluster.txt");
resource!(ATTR_GENERATE, "prompts/attr_generate.txt");
resource!(FAILURE_ANALYSIS, "prompts/failure_analysis.txt");
resource!(FAILURE_TAXONOMY, "failure_taxonomy.txt");
resource!(TOOL_SELECTION, "prompts/tool_selection.txt");
resource!(HISTORY_SECTION, "prompts/history_section.txt");
resource!(PROFILE_EXTRACTION, "prompts/profile_extraction.txt");
resource!(INTENT_CLASSIFICATION, "prompts/intent_classification.txt");
resource!(QUERY_GENERATION, "prompts/query_generation.txt");
resource!(QUERY_DEDUP, "prompts/query_dedup.txt");
resource!(DOMAIN_FILTER, "prompts/domain_filter.txt");

resource!(TOOL_ENTITY_INJECTION, "tools/entity_injection.txt");
resource!(TOOL_DATA_SERIALIZATION, "tools/data_serialization.txt");
resource!(TOOL_STRUCTURE_OPTIMIZATION, "tools/structure_optimization.txt");
resource!(TOOL_NOISE_ISOLATION, "tools/noise_isolation.txt");
resource!(TOOL_BLUF_OPTIMIZATION, "tools/bluf_optimization.txt");
resource!(TOOL_CONTENT_RELOCATION, "tools/content_relocation.txt");
resource!(TOOL_INTENT_REALIGNMENT, "tools/intent_realignment.txt");
resource!(TOOL_PERSUASIVE_REWRITING, "tools/persuasive_rewriting.txt");
resource!(TOOL_STATIC_RENDERER, "tools/static_renderer.txt");
resource!(
    REDTEAM_TIMELINE_FRAMING,
    "tools/historical_redteam_timeline_framing.txt"
);
resource!(REDTEAM_IMPLICIT_PROMPT, "tools/historical_redteam_implicit_prompt.txt");
resource!(
    REDTEAM_COMPARATIVE_ANALYSIS,
    "tools/historical_redteam_comparative_analysis.txt"
);
resource!(
    REDTEAM_COMPLETENESS_EMPHASIS,
    "tools/historical_redteam_completeness_emphasis.txt"
);
resource!(
    REDTEAM_KNOWLEDGE_ANCHORING,
    "tools/historical_redteam_knowledge_anchoring.txt"
);
