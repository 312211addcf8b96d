"""Metaclass for Singleton

https://www.pythonprogramming.in/singleton-class-using-metaclass-in-python.html

Runs of an experiment are trained on worker threads, so the first construction
is guarded by a lock.
"""

import threading


class SingletonMetaClass(type):
    """Metaclass for Singleton

    Usage:
        class MySingleton(metaclass=SingletonMetaClass):
            ...

        instance1 = MySingleton()
        instance2 = MySingleton()
        assert instance1 is instance2

        MySingleton.reset_instance()   # next call constructs a fresh one
    """

    def __init__(cls, name, bases, dic):
        cls.__single_instance = None
        cls.__lock = threading.Lock()
        super().__init__(name, bases, dic)

    def __call__(cls, *args, **kwargs):
        if cls.__single_instance is not None:
            return cls.__single_instance
        with cls.__lock:
            if cls.__single_instance is None:
                single_obj = cls.__new__(cls)
                single_obj.__init__(*args, **kwargs)
                cls.__single_instance = single_obj
        return cls.__single_instance

    def reset_instance(cls) -> None:
        with cls.__lock:
            cls.__single_instance = None
