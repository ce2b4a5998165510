import unittest
from tests.test_studies import *
from tests.test_partitions import *
from tests.test_moments import *
from tests.test_posterior import *
from tests.test_draws import *
from tests.test_diagnostics import *
from tests.test_covariates import *
from tests.test_dpm import *
from tests.test_rjmcmc import *
from tests.test_cli import *
from tests.test_reproduction import *

if __name__ == '__main__':
    unittest.main()
