from .studies import (ContinuityPolicy, EffectScale, EffectSummary, Study, StudySet,
                      bundled_dataset, dataset_names, effect_summary, load_studies,
                      serialize_studies)
