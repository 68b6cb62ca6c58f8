"""Indoor mobility modeling from enterprise WiFi syslogs."""

__all__ = ["MobilityTransformer", "NgramModel", "HmmModel"]


def __getattr__(name):
    # lazy re-exports keep `import mobmod` light for pipeline-only use
    if name == "MobilityTransformer":
        from mobmod.training import MobilityTransformer

        return MobilityTransformer
    if name in ("NgramModel", "HmmModel"):
        from mobmod import baselines

        return getattr(baselines, name)
    raise AttributeError(f"module 'mobmod' has no attribute {name!r}")
