import hashlib
import os
import re
import threading
import time

import requests

import logging

log = logging.getLogger(__name__)

ENDPOINT_VARIABLE = "IALORA_ANNOTATION_ENDPOINT"
API_KEY_VARIABLE = "IALORA_ANNOTATION_API_KEY"


class AnnotationClient:
    """
    Service that answers a prompt with a transformed label.

    Calls are throttled to at most ``rate_limit`` requests per second across
    all threads using the client.
    """

    def __init__(self, rate_limit: float = None, timeout: float = 30.0):
        """
        Constructor

        :param float rate_limit: requests per second, None for no limit
        :param float timeout: seconds to wait for a response
        """
        if rate_limit is not None and rate_limit <= 0:
            raise ValueError(f"rate_limit must be positive, got {rate_limit}")
        self.rate_limit = rate_limit
        self.timeout = timeout
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def _throttle(self):
        if self.rate_limit is None:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + 1.0 / self.rate_limit
        if wait > 0:
            time.sleep(wait)

    def send(self, prompt: str) -> str:
        self._throttle()
        return self._send(prompt)

    def _send(self, prompt: str) -> str:
        raise NotImplementedError


class OfflineStubClient(AnnotationClient):
    """
    Deterministic stand-in for an annotation service.

    The stub echoes the original label of the prompt behind a fixed reasoning
    sentence. A share ``corruption_rate`` of prompts, chosen by the hash of the
    prompt, gets a corrupted answer: either the answer line is missing or the
    last digit of the label is changed.
    """

    def __init__(
        self,
        corruption_rate: float = 0.0,
        rate_limit: float = None,
        timeout: float = 30.0,
    ):
        super().__init__(rate_limit=rate_limit, timeout=timeout)
        if not 0.0 <= corruption_rate <= 1.0:
            raise ValueError(
                f"corruption_rate must lie in [0, 1], got {corruption_rate}"
            )
        self.corruption_rate = corruption_rate

    @staticmethod
    def _digest(prompt: str) -> bytes:
        return hashlib.sha256(prompt.encode("utf-8")).digest()

    def _send(self, prompt: str) -> str:
        labels = re.findall(r"^Original label: (.*)$", prompt, flags=re.MULTILINE)
        if not labels:
            return "Reasoning: The prompt holds no label to transform."
        label = labels[-1].strip()
        reasoning = (
            "The audio and the visual stream agree with the annotated label, so "
            "the label is kept."
        )
        digest = self._digest(prompt)
        draw = int.from_bytes(digest[:8], "big") / 2**64
        if draw < self.corruption_rate:
            if digest[8] % 2 == 0:
                return f"Reasoning: {reasoning}"
            label = _change_last_digit(label)
        return f"Reasoning: {reasoning}\nAnswer: {label}"


def _change_last_digit(label: str) -> str:
    for i in range(len(label) - 1, -1, -1):
        if label[i].isdigit():
            digit = (int(label[i]) + 1) % 10
            return f"{label[:i]}{digit}{label[i + 1:]}"
    return label + " maybe"


class HttpAnnotationClient(AnnotationClient):
    """
    Client of an annotation service that accepts ``{"prompt": ...}`` as JSON and
    answers ``{"response": ...}``.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str = None,
        rate_limit: float = None,
        timeout: float = 30.0,
    ):
        super().__init__(rate_limit=rate_limit, timeout=timeout)
        self.endpoint = endpoint
        self.api_key = api_key
        self.session = requests.Session()

    @classmethod
    def from_environment(cls, rate_limit: float = None, timeout: float = 30.0):
        """
        Client configured by IALORA_ANNOTATION_ENDPOINT and
        IALORA_ANNOTATION_API_KEY
        """
        endpoint = os.environ.get(ENDPOINT_VARIABLE)
        if not endpoint:
            raise ValueError(
                f"Set {ENDPOINT_VARIABLE} to the URL of the annotation service"
            )
        return cls(
            endpoint,
            api_key=os.environ.get(API_KEY_VARIABLE),
            rate_limit=rate_limit,
            timeout=timeout,
        )

    def _send(self, prompt: str) -> str:
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = self.session.post(
            self.endpoint,
            json={"prompt": prompt},
            headers=headers,
            timeout=self.timeout,
        )
        if response.status_code != 200:
            log.warning(
                f"Annotation service answered with status {response.status_code}"
            )
        response.raise_for_status()
        return response.json()["response"]
