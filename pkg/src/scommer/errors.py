class ShapeError(ValueError):
    """Input or parameter shapes do not chain."""


class NonFiniteError(FloatingPointError):
    def __init__(self, layer_index, where="forward"):
        super().__init__(f"non-finite values produced at layer {layer_index} during {where}")
        self.layer_index = layer_index


class MissingCacheError(RuntimeError):
    pass


class ConfigError(ValueError):
    """Invalid run configuration; ``problems`` holds one message per offending key."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


class DatasetError(ValueError):
    pass
