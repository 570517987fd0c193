class Error(Exception):
    """Base class for exceptions raised by the evolution engine."""

    def __init__(self, message):
        super().__init__(message)
        self.message = message


class ConfigError(Error):
    """
    Exception raised when an experiment config or input file fails validation.
    Attributes:
        message: explanation of the error
        errors: {field: [messages]} as reported by the serializer
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}


def flatten_errors(errors, prefix=''):
    """
    Flattens nested serializer errors into {'dotted.field': [messages]}
    """
    flat = {}
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = '{}.{}'.format(prefix, key) if prefix else str(key)
            flat.update(flatten_errors(value, name))
    elif isinstance(errors, list) and errors and isinstance(errors[0], (dict, list)):
        for i, value in enumerate(errors):
            if value:
                flat.update(flatten_errors(value, '{}[{}]'.format(prefix, i)))
    else:
        flat[prefix or 'non_field_errors'] = [str(e) for e in errors]
    return flat
