"""
HTTP session with bounded retries
"""

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

RETRY_STATUSES = (429, 500, 502, 503, 504)


def create_session(retries=3, backoff_factor=0.5, user_agent=None):
    """
    Create a requests session that retries transport failures and
    transient statuses with exponential backoff.

    :param retries: total retry attempts
    :param backoff_factor: backoff factor, sleep is factor * 2 ** (n - 1)
    :param user_agent: optional User-Agent header
    :return: requests.Session
    """
    retry = Retry(total=retries, connect=retries, read=retries,
                  backoff_factor=backoff_factor,
                  status_forcelist=RETRY_STATUSES,
                  allowed_methods=frozenset(['GET', 'POST']),
                  raise_on_status=False)
    session = requests.Session()
    adapter = HTTPAdapter(max_retries=retry)
    session.mount('http://', adapter)
    session.mount('https://', adapter)
    if user_agent:
        session.headers.update({'User-Agent': user_agent})
    return session
