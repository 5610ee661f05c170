from .template_creation import (
    ConfigurationError,
    initialize_configuration_templates,
    create_experiment_templates,
    load_configuration,
    config_value,
    set_config_value,
    configuration_values,
    show_available_templates,
    show_available_grammars,
)
