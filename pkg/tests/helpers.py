from adaswitch.backends import AgentProfile


def synthetic(name, role, params, **backend):
    return AgentProfile(name, role, params, {"kind": "synthetic", **backend})


def local_profile(eps=0.3, detect=0.9, false_alarm=0.1, **kw):
    return synthetic(
        "local", "local", 1.3e9, step_error_rate=eps, detect_rate_when_wrong=detect,
        false_alarm_rate_when_correct=false_alarm, **kw,
    )


def cloud_profile(eps=0.05, **kw):
    return synthetic("cloud", "cloud", 30e9, step_error_rate=eps, **kw)
